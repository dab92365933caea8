"""Central finite-difference checks of the hand-written adjoints.

Each check builds a float64 scalar objective ``sum(out * probe)`` with a
fixed random probe, compares the tape gradient of every input against
central differences, and reports the norm-wise relative error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import (AttentionConfig, Embedding, EncoderLayer, FeedForward, LayerNorm, Linear,
                     MultiHeadAttention, ParamStore)


@dataclass
class GradCheckResult:
    layer: str
    shape: tuple
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error < 1e-3


def relative_error(a: np.ndarray, b: np.ndarray, floor=1e-6) -> float:
    """Norm-wise relative error; ``floor`` keeps identically-zero gradients
    (e.g. key bias under softmax shift invariance) from dividing noise by noise."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: np.ndarray, eps=1e-3) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check(forward, inputs: list[Tensor], rng, eps=1e-3) -> float:
    """Max relative error over ``inputs`` for objective sum(forward() * probe)."""
    with ag.no_grad():
        probe = rng.standard_normal(forward().shape)

    def objective():
        with ag.no_grad():
            return float(np.sum(forward().data * probe))

    for t in inputs:
        t.grad = None
    out = forward()
    out.backward(probe)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(objective, t.data, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _store(seed):
    return ParamStore(seed=seed, dtype=np.float64)


def _check_linear(rng, shape):
    b, d_in, d_out = shape
    store = _store(int(rng.integers(1 << 30)))
    layer = Linear(store, "lin", d_in, d_out)
    store["lin.bias"].data[:] = rng.standard_normal(d_out)
    x = _leaf(rng, (b, d_in))
    return check(lambda: layer(x), [x, layer.weight, layer.bias], rng)


def _check_embedding(rng, shape):
    n, d, length = shape
    store = _store(int(rng.integers(1 << 30)))
    layer = Embedding(store, "emb", n, d)
    ids = rng.integers(0, n, size=(2, length))
    return check(lambda: layer(ids), [layer.weight], rng)


def _check_layer_norm(rng, shape):
    store = _store(0)
    layer = LayerNorm(store, "ln", shape[-1])
    layer.gamma.data[:] = rng.standard_normal(shape[-1])
    layer.beta.data[:] = rng.standard_normal(shape[-1])
    x = _leaf(rng, shape)
    return check(lambda: layer(x), [x, layer.gamma, layer.beta], rng)


def _check_softmax(rng, shape):
    x = _leaf(rng, shape)
    mask = rng.random(shape) > 0.3
    mask[..., 0] = True
    return max(check(lambda: ag.softmax(x), [x], rng),
               check(lambda: ag.softmax(x, mask=mask), [x], rng))


def _check_dropout(rng, shape):
    x = _leaf(rng, shape)
    key = (int(rng.integers(1 << 30)), 7)
    return check(lambda: ag.dropout(x, 0.3, key, training=True), [x], rng)


def _check_attention(rng, shape):
    b, lq, lk, d, heads = shape
    store = _store(int(rng.integers(1 << 30)))
    mha = MultiHeadAttention(store, "mha", d, heads)
    for name, p in store:
        if name.endswith("bias"):
            p.data[:] = 0.1 * rng.standard_normal(p.shape)
    q = _leaf(rng, (b, lq, d))
    kv = _leaf(rng, (b, lk, d))
    mask = rng.random((b, lk)) > 0.3
    mask[:, 0] = True
    params = [p for _, p in store]
    return check(lambda: mha(q, kv, kv, mask), [q, kv] + params, rng)


def _check_feed_forward(rng, shape):
    b, d, d_ff = shape
    worst = 0.0
    for act in ("sigmoid", "relu", "gelu"):
        store = _store(int(rng.integers(1 << 30)))
        ff = FeedForward(store, "ff", d, d_ff, activation=act)
        x = _leaf(rng, (b, d))
        if act == "relu":
            # keep pre-activations away from the kink
            with ag.no_grad():
                pre = ff.fc1(x).data
            ff.fc1.bias.data[:] += np.where(np.abs(pre).min(axis=0) < 0.05, 0.2, 0.0)
        params = [p for _, p in store]
        worst = max(worst, check(lambda: ff(x), [x] + params, rng))
    return worst


def _check_cross_entropy(rng, shape):
    n, c = shape
    x = _leaf(rng, (n, c))
    t = rng.integers(0, c, size=n)
    return check(lambda: ag.cross_entropy(x, t), [x], rng)


def _check_encoder_layer(rng, shape):
    b, length, d, heads = shape
    store = _store(int(rng.integers(1 << 30)))
    layer = EncoderLayer(store, "enc", AttentionConfig(d, heads, 2 * d, 0.0), activation="gelu")
    x = _leaf(rng, (b, length, d))
    mask = rng.random((b, length)) > 0.3
    mask[:, 0] = True
    params = [p for _, p in store]
    return check(lambda: layer(x, mask), [x] + params, rng)


def _check_pooling(rng, shape):
    b, length, d = shape
    x = _leaf(rng, (b, length, d))
    mask = rng.random((b, length)) > 0.4
    mask[:, 0] = True
    idx = rng.permutation(b * length)[: max(1, b * length // 2)]
    flat = lambda: ag.reshape(x, (b * length, d))  # noqa: E731
    return max(check(lambda: ag.masked_mean(x, mask), [x], rng),
               check(lambda: ag.scatter_rows(ag.take_rows(flat(), idx), idx, b * length), [x], rng))


LAYER_SHAPES = {
    "linear": (_check_linear, [(1, 1, 1), (3, 4, 5), (2, 7, 3), (5, 2, 6), (4, 8, 8)]),
    "embedding": (_check_embedding, [(3, 2, 1), (5, 4, 3), (7, 3, 6), (2, 5, 4), (10, 6, 2)]),
    "layer_norm": (_check_layer_norm, [(2, 3), (4, 5), (2, 3, 6), (1, 8), (3, 2, 4)]),
    "softmax": (_check_softmax, [(2,), (3, 4), (2, 3, 5), (6, 2), (1, 2, 3, 4)]),
    "dropout": (_check_dropout, [(4,), (3, 5), (2, 3, 4), (8, 2), (5, 5)]),
    "multi_head_attention": (_check_attention,
                             [(1, 2, 3, 4, 1), (2, 3, 3, 4, 2), (1, 4, 2, 6, 3), (2, 1, 5, 8, 4), (3, 2, 2, 2, 1)]),
    "feed_forward": (_check_feed_forward, [(2, 3, 5), (4, 4, 8), (1, 6, 3), (3, 2, 2), (2, 5, 7)]),
    "cross_entropy": (_check_cross_entropy, [(1, 2), (3, 4), (5, 2), (2, 7), (4, 3)]),
    "encoder_layer": (_check_encoder_layer, [(1, 2, 4, 2), (2, 3, 4, 1), (2, 2, 6, 3), (1, 4, 2, 1), (3, 1, 4, 4)]),
    "pooling": (_check_pooling, [(1, 2, 3), (2, 3, 2), (3, 1, 4), (2, 4, 1), (4, 2, 2)]),
}


def run_all(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, shapes) in LAYER_SHAPES.items():
        for shape in shapes:
            results.append(GradCheckResult(name, shape, fn(rng, shape)))
    return results


if __name__ == "__main__":
    t0 = time.perf_counter()
    res = run_all()
    for r in res:
        print(f"{r.layer:22s} {str(r.shape):18s} {r.rel_error:.2e} {'ok' if r.ok else 'FAIL'}")
    print(f"{sum(r.ok for r in res)}/{len(res)} passed in {time.perf_counter() - t0:.1f}s"
          f" (max err {max(r.rel_error for r in res):.2e})")
