"""Minimal reverse-mode autodiff over numpy float64 arrays."""

from . import ops
from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import Adam
from .params import ParamStore
from .tensor import Tape, TapeError, Tensor, active_tape, as_tensor, backward

__all__ = [
    "ops", "Tensor", "Tape", "TapeError", "backward", "active_tape", "as_tensor",
    "Adam", "ParamStore", "check_gradients", "numerical_grad", "relative_error",
]
