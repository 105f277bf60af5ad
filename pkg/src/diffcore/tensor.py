"""Dense tensors with a recording tape for reverse-mode differentiation.

Every operation in :mod:`src.diffcore.functional` produces a :class:`DiffTensor`
and, when any input requires a gradient, appends a :class:`TapeRecord` to the
active :class:`Tape`.  Records are appended in creation order, which is a
topological order of the computation, so :func:`backward` is a single reverse
sweep over the tape.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# ---------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple["DiffTensor", ...]
    output: "DiffTensor"
    backward_fn: BackwardFn

    @property
    def input_ids(self) -> Tuple[Optional[int], ...]:
        return tuple(t.tape_id for t in self.inputs)


class Tape:
    """Ordered list of operation records.

    A tape is single-writer: tensors recorded on it must not be mutated from
    other threads.  Entering a tape with ``with`` makes it the active tape of
    the current thread.
    """

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []

    def record(
        self,
        op: str,
        inputs: Tuple["DiffTensor", ...],
        output: "DiffTensor",
        backward_fn: BackwardFn,
    ) -> int:
        self.records.append(TapeRecord(op, inputs, output, backward_fn))
        return len(self.records) - 1

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()


_state = threading.local()


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> Tape:
    """Return the innermost entered tape, or the thread's default tape."""
    stack = _tape_stack()
    if stack:
        return stack[-1]
    default = getattr(_state, "default_tape", None)
    if default is None:
        default = Tape()
        _state.default_tape = default
    return default


def reset_default_tape() -> None:
    _state.default_tape = Tape()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that stops operations from being recorded."""

    def __enter__(self) -> "no_grad":
        self._prev = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _state.grad_enabled = self._prev


# ---------------------------------------------------------------------
# DiffTensor
# ---------------------------------------------------------------------


class DiffTensor:
    """Float64 array with lazily allocated gradient storage."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape", "name")

    def __init__(
        self,
        values: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data: np.ndarray = np.array(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape_id: Optional[int] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @classmethod
    def wrap(cls, data: np.ndarray) -> "DiffTensor":
        """Wrap an array produced by an operation without copying it."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.requires_grad = False
        out.tape_id = None
        out._tape = None
        out.name = None
        return out

    @classmethod
    def parameter(cls, values: Any, name: Optional[str] = None) -> "DiffTensor":
        return cls(values, requires_grad=True, name=name)

    # -- shape helpers -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- operators (delegate to functional) ----------------------------

    def __add__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.sub(other, self)

    def __mul__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.div(self, other)

    def __rtruediv__(self, other: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.div(other, self)

    def __neg__(self) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.scale(self, -1.0)

    def __matmul__(self, other: "DiffTensor") -> "DiffTensor":
        from src.diffcore import functional as F

        return F.matmul(self, other)

    def __getitem__(self, index: Any) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.slice_(self, index)

    @property
    def T(self) -> "DiffTensor":
        from src.diffcore import functional as F

        return F.transpose(self)


def as_tensor(value: Any) -> DiffTensor:
    if isinstance(value, DiffTensor):
        return value
    return DiffTensor(value)


def make_result(
    op: str,
    data: np.ndarray,
    inputs: Sequence[DiffTensor],
    backward_fn: BackwardFn,
) -> DiffTensor:
    """Wrap ``data`` and record it on the active tape when needed."""
    out = DiffTensor.wrap(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        tape = active_tape()
        out.requires_grad = True
        out._tape = tape
        out.tape_id = tape.record(op, tuple(inputs), out, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------
# Backward sweep
# ---------------------------------------------------------------------


def backward(loss: DiffTensor) -> None:
    """Populate gradients of every tensor reachable from a scalar loss.

    Gradients of leaf tensors accumulate across calls; intermediate tensors
    are reset at the start of each sweep.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or loss.tape_id is None:
        raise ContractError("backward() on a tensor that was not recorded on a tape")

    records = tape.records[: loss.tape_id + 1]
    for record in records:
        record.output.grad = None
    loss.grad = np.ones_like(loss.data)

    for record in reversed(records):
        upstream = record.output.grad
        if upstream is None:
            continue
        grads = record.backward_fn(upstream)
        for tensor, grad in zip(record.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            grad = unbroadcast(np.asarray(grad, dtype=np.float64), tensor.shape)
            if tensor.grad is None:
                tensor.grad = np.array(grad, copy=True)
            else:
                tensor.grad = tensor.grad + grad
