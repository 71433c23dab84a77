"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    flat = t.data.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(t.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps entries whose true gradient is ~0 from dominating through
    round-off; for those the check degrades to an absolute one.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare tape gradients of scalar ``fn()`` against finite differences.

    Returns ``{param index or name: max relative error}``.
    """
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape():
        loss = fn()
    backward(loss)
    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_grad(fn, p, h)
        errors[p.name or i] = relative_error(analytic, numeric, floor)
    return errors
