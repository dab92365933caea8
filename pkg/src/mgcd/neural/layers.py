"""Parameter store, initializers and transformer building blocks."""
from __future__ import annotations

import math
import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 512
    heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model <= 0 or self.heads <= 0 or self.d_ff <= 0:
            raise ValueError("attention dimensions must be positive")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")


def kaiming_uniform(shape, fan_in: int, gain: float = math.sqrt(2.0), rng=None, dtype=np.float32) -> Tensor:
    """Uniform(-b, b) with b = gain * sqrt(3 / fan_in)."""
    if fan_in <= 0:
        raise ValueError("kaiming_uniform needs fan_in > 0")
    rng = rng if rng is not None else np.random.default_rng()
    bound = gain * math.sqrt(3.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape) if bound > 0 else np.zeros(shape)
    return Tensor(data.astype(dtype), requires_grad=True)


class ParamStore:
    """Named trainable tensors plus per-parameter optimizer state."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.step = 0
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)

    def derive_seed(self, name: str) -> int:
        """Stable per-component seed (for dropout streams)."""
        return ((self.seed & 0xFFFFFFFF) << 32) | zlib.crc32(name.encode("utf-8"))

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.data = tensor.data.astype(self.dtype)
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def kaiming(self, name, shape, fan_in, gain=math.sqrt(2.0)) -> Tensor:
        return self.add(name, kaiming_uniform(shape, fan_in, gain, self.rng, self.dtype))

    def zeros(self, name, shape) -> Tensor:
        return self.add(name, Tensor(np.zeros(shape, dtype=self.dtype)))

    def ones(self, name, shape) -> Tensor:
        return self.add(name, Tensor(np.ones(shape, dtype=self.dtype)))

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def grad_norm(self, prefix: str = "") -> float:
        total = 0.0
        for name, p in self.params.items():
            if name.startswith(prefix) and p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def to_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in arrays.items():
            p = self.params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)


class Dropout:
    """Inverted dropout whose masks come from (seed, call counter)."""

    def __init__(self, p: float, seed: int):
        self.p = p
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.p <= 0:
            return x
        self.counter += 1
        return ag.dropout(x, self.p, (self.seed, self.counter), training=True)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, gain=math.sqrt(2.0), bias=True):
        self.weight = store.kaiming(f"{name}.weight", (d_in, d_out), d_in, gain)
        self.bias = store.zeros(f"{name}.bias", (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"linear: input {x.shape} vs weight {self.weight.shape}")
        y = ag.matmul(x, self.weight)
        return ag.add(y, self.bias) if self.bias is not None else y


class Embedding:
    def __init__(self, store: ParamStore, name: str, n: int, d: int):
        self.weight = store.kaiming(f"{name}.weight", (n, d), d, gain=1.0)

    def __call__(self, ids) -> Tensor:
        return ag.embedding(self.weight, ids)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps=1e-5):
        self.gamma = store.ones(f"{name}.gamma", (d,))
        self.beta = store.zeros(f"{name}.beta", (d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention:
    """Scaled dot-product attention over ``heads`` subspaces.

    Inputs are (B, Lq, d) queries and (B, Lk, d) keys/values; ``mask`` is a
    boolean (B, Lk) key mask or (B, Lq, Lk) full mask, True = attend.
    """

    def __init__(self, store: ParamStore, name: str, d_model: int, heads: int, dropout: float = 0.0):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(store, f"{name}.q", d_model, d_model, gain=1.0)
        self.k = Linear(store, f"{name}.k", d_model, d_model, gain=1.0)
        self.v = Linear(store, f"{name}.v", d_model, d_model, gain=1.0)
        self.o = Linear(store, f"{name}.o", d_model, d_model, gain=1.0)
        self.drop = Dropout(dropout, store.derive_seed(name))
        self.last_weights = None

    def _split(self, x: Tensor) -> Tensor:
        b, l, _ = x.shape
        return ag.transpose(ag.reshape(x, (b, l, self.heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask=None, training=False) -> Tensor:
        if q_in.ndim != 3 or k_in.ndim != 3 or v_in.ndim != 3:
            raise ValueError(f"attention expects 3-D inputs, got {q_in.shape}, {k_in.shape}, {v_in.shape}")
        if k_in.shape[:2] != v_in.shape[:2] or q_in.shape[0] != k_in.shape[0]:
            raise ValueError(f"attention shape mismatch: Q {q_in.shape}, K {k_in.shape}, V {v_in.shape}")
        b, lq, d = q_in.shape
        q = self._split(self.q(q_in))
        k = self._split(self.k(k_in))
        v = self._split(self.v(v_in))
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.d_head))
        m = None
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            m = m[:, None, None, :] if m.ndim == 2 else m[:, None, :, :]
        w = ag.softmax(scores, mask=m)
        self.last_weights = w.data
        w = self.drop(w, training)
        ctx = ag.matmul(w, v)
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, lq, d))
        return self.o(ctx)


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d_model: int, d_ff: int,
                 activation: str = "sigmoid", dropout: float = 0.0):
        if activation not in ag.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ag.ACTIVATIONS)}")
        self.fc1 = Linear(store, f"{name}.fc1", d_model, d_ff)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d_model, gain=1.0)
        self.act = ag.ACTIVATIONS[activation]
        self.drop = Dropout(dropout, store.derive_seed(name))

    def __call__(self, x: Tensor, training=False) -> Tensor:
        return self.fc2(self.drop(self.act(self.fc1(x)), training))


def sinusoidal_positions(length: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


class EncoderLayer:
    """Post-norm transformer encoder block."""

    def __init__(self, store, name, cfg: AttentionConfig, activation="sigmoid"):
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d_model, cfg.heads, cfg.dropout)
        self.norm1 = LayerNorm(store, f"{name}.norm1", cfg.d_model)
        self.ff = FeedForward(store, f"{name}.ff", cfg.d_model, cfg.d_ff, activation, cfg.dropout)
        self.norm2 = LayerNorm(store, f"{name}.norm2", cfg.d_model)
        self.drop = Dropout(cfg.dropout, store.derive_seed(f"{name}.residual"))

    def __call__(self, x, mask, training=False):
        x = self.norm1(ag.add(x, self.drop(self.attn(x, x, x, mask, training), training)))
        return self.norm2(ag.add(x, self.drop(self.ff(x, training), training)))
