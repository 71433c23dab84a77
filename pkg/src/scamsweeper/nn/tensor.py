"""Dense float64 tensors with a recording tape for reverse-mode differentiation.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    backward(loss)

Outside an active tape every op behaves like ``no_grad``: results are
detached and calling :func:`backward` on them raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["Tensor", "Tape", "TapeError", "backward", "active_tape", "as_tensor"]


class TapeError(RuntimeError):
    """Raised for misuse of the recording tape (detached loss, double backward)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out: Tensor
    inputs: Sequence[Tensor]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_ACTIVE: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _ACTIVE[-1] if _ACTIVE else None


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so the list is already a
    topological order; :meth:`backward` walks it once in reverse.
    """

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
        out.requires_grad = True
        out._tape = self
        self.nodes.append(_Node(out, tuple(inputs), backward_fn))
        return out

    def reset(self) -> None:
        for node in self.nodes:
            node.out._tape = None
        self.nodes.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss is not connected to this tape")
        if self.consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        if not any(node.out is loss for node in reversed(self.nodes)):
            raise TapeError("loss was not recorded on this tape (was it reset?)")
        self.consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is self:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                else:
                    # leaf: accumulate across backward calls until zero_grad
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
        # drop the tensor <-> tape cycles so activations are freed promptly;
        # the loss keeps its link so a second backward() reports consumption
        for node in self.nodes:
            if node.out is not loss:
                node.out._tape = None
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on."""
    if loss._tape is None:
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        raise TapeError("loss is detached: it was not computed under an active Tape")
    loss._tape.backward(loss)
