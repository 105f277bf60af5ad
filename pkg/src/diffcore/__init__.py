"""Minimal reverse-mode automatic differentiation over float64 tensors."""

from src.diffcore.tensor import (
    DiffTensor,
    Tape,
    active_tape,
    backward,
    no_grad,
    reset_default_tape,
)
from src.diffcore.gradcheck import finite_diff_check, parameter_grad_check

__all__ = [
    "DiffTensor",
    "Tape",
    "active_tape",
    "backward",
    "no_grad",
    "reset_default_tape",
    "finite_diff_check",
    "parameter_grad_check",
]
