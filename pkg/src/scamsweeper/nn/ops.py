"""Differentiable operations on :class:`Tensor`.

Every op computes its forward result with numpy and, when a tape is active
and some input requires a gradient, records a closure returning the
gradient with respect to each input.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, active_tape, as_tensor

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "swapaxes", "reshape",
    "index", "concat", "stack", "sum", "mean", "exp", "log", "tanh", "relu",
    "leaky_relu", "elu", "gelu", "softmax", "log_softmax", "layer_norm", "linear",
    "dropout", "cross_entropy", "masked_fill", "where",
]


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a @ b`` (both operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


# -- shape manipulation ---------------------------------------------------------

def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (int, slice)) for p in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(a.data[idx]), (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, bw)


# -- reductions -----------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bw)


# -- nonlinearities -------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    """``max(x, slope * x)`` for ``0 < slope < 1``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = as_tensor(a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw)


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` (broadcastable boolean, True = keep) sets excluded positions to
    ``-inf`` before normalisation; each slice must keep at least one entry.
    """
    a = as_tensor(a)
    x = a.data if mask is None else np.where(mask, a.data, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (a,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def dropout(x, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def masked_fill(x, mask: np.ndarray, value: float = 0.0) -> Tensor:
    """Replace entries where ``mask`` is False by ``value``; no gradient flows there."""
    x = as_tensor(x)
    keep = np.broadcast_to(mask, x.shape)
    return _make(np.where(keep, x.data, value), (x,), lambda g: (np.where(keep, g, 0.0),))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)
    return _make(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                                         _unbroadcast(np.where(cond, 0.0, g), b.shape)))


def cross_entropy(logits, labels, weights: Optional[np.ndarray] = None) -> Tensor:
    """Softmax cross-entropy averaged over the batch.

    With class ``weights`` the mean is weighted: ``sum(w[y] * nll) / sum(w[y])``.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy expects (B, C) logits and (B,) labels, "
                         f"got {logits.shape} and {labels.shape}")
    n, c = logits.shape
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    wy = w[labels]
    total = wy.sum()
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -(wy * logp[rows, labels]).sum() / total

    def bw(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (wy / total)[:, None] * g,)

    return _make(np.asarray(loss), (logits,), bw)
