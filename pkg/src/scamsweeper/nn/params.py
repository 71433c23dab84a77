from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore(OrderedDict):
    """Named learnable tensors in a fixed declaration order.

    Declaration order is the serialisation order of checkpoints, so it must
    not depend on anything but the model config.
    """

    def __init__(self, rng: np.random.Generator | None = None):
        super().__init__()
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def xavier(self, name: str, fan_in: int, fan_out: int, gain: float = 1.0,
               shape: tuple | None = None) -> Tensor:
        bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def tensors(self) -> Iterator[Tensor]:
        return iter(self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, state: dict) -> None:
        for k, v in self.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != expected {v.shape}")
            v.data = arr.copy()

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))
