"""Adam and AdamW updates over a ParamStore."""
from __future__ import annotations

import numpy as np

from .layers import ParamStore


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
              decoupled=False):
    """One bias-corrected Adam update. Parameters without a gradient are left untouched.

    ``weight_decay`` with ``decoupled=True`` gives AdamW; otherwise it is added
    to the gradient as classic L2.
    """
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        if decoupled and weight_decay:
            p.data -= (lr * weight_decay) * p.data
        if g is None:
            continue
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        st = store.state.get(name)
        if st is None:
            st = store.state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
        m, v = st["m"], st["v"]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def adamw_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
    adam_step(store, lr, beta1, beta2, eps, weight_decay=weight_decay, decoupled=True)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    norm = store.grad_norm()
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for p in store.params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
