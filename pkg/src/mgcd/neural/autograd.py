"""Dense tensors with tape-recorded reverse-mode differentiation.

Every differentiable operation is a function that computes its forward value
with numpy and, when recording is enabled, attaches a closure that maps the
output adjoint to the adjoints of its inputs. ``Tensor.backward`` replays the
recorded graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # Free the graph so activations can be collected.
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    # Operator sugar; the heavy lifting lives in the functions below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _coerce(a, b):
    """Wrap operands as tensors; constants adopt the dtype of the other operand."""
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and not b_t:
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if b_t and not a_t:
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = x.data * mask

    def backward(g):
        return (g * mask,)

    return _result(y, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    y = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _result(y, (x,), backward)


ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "gelu": gelu}


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    y = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _result(y, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _result(y, (x,), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather along axis 0: ``x[index]`` for an integer index array."""
    index = np.asarray(index)
    y = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _result(y, (x,), backward)


def scatter_rows(x: Tensor, index, n_rows: int) -> Tensor:
    """Inverse of ``take_rows`` for unique indices: places row k of ``x`` at ``index[k]``."""
    index = np.asarray(index)
    y = np.zeros((n_rows,) + x.shape[1:], dtype=x.dtype)
    y[index] = x.data

    def backward(g):
        return (g[index],)

    return _result(y, (x,), backward)


# ---------------------------------------------------------------- reductions

def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(y, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis 1 of a (B, L, D) tensor counting only positions where ``mask`` (B, L) is true."""
    m = np.asarray(mask, dtype=x.dtype)
    counts = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    w = (m / counts)[:, :, None]
    y = (x.data * w).sum(axis=1)

    def backward(g):
        return (g[:, None, :] * w,)

    return _result(y, (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def backward(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = g @ bt
        if b.ndim == 2 and a.ndim > 2:
            # Shared weight: contract over every leading axis at once.
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(at @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _result(y, (a, b), backward)


# ---------------------------------------------------------------- normalized maps

def softmax(x: Tensor, mask=None, axis=-1) -> Tensor:
    """Softmax along ``axis``. ``mask`` (broadcastable, True = keep) forces exact zeros."""
    v = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        v = np.where(mask, v, -np.inf)
    mx = np.max(v, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(v - mx)
    s = e.sum(axis=axis, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _result(y, (x, gamma, beta), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError(f"embedding id out of range for table of {weight.shape[0]} rows")
    y = weight.data[ids]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _result(y, (weight,), backward)


def dropout_mask(shape, p: float, key, dtype) -> np.ndarray:
    """Inverted-dropout keep mask from a counter-based generator keyed by ``key``."""
    rng = np.random.Generator(np.random.Philox(key=np.asarray(key, dtype=np.uint64)))
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


def dropout(x: Tensor, p: float, key, training=True) -> Tensor:
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    m = dropout_mask(x.shape, p, key, x.dtype)
    y = x.data * m

    def backward(g):
        return (g * m,)

    return _result(y, (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits) over the last axis.

    Accepts (C,) with a scalar target or (N, C) with N targets. Target value
    -1 marks an ignored row (excluded from the mean).
    """
    squeeze = logits.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data.reshape(-1, logits.shape[-1])
    t = np.atleast_1d(np.asarray(targets)).reshape(-1)
    if t.shape[0] != z.shape[0]:
        raise ValueError(f"cross_entropy: {z.shape[0]} rows but {t.shape[0]} targets")
    n_classes = z.shape[1]
    valid = t >= 0
    if np.any(t >= n_classes) or np.any(t < -1):
        raise ValueError(f"cross_entropy target out of range [0, {n_classes})")
    mx = z.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(z - mx).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.nonzero(valid)[0]
    count = max(len(rows), 1)
    loss = -logp[rows, t[rows]].sum() / count

    def backward(g):
        p = np.exp(logp)
        p[rows, t[rows]] -= 1.0
        p[~valid] = 0.0
        gz = p * (g / count)
        return (gz.reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
