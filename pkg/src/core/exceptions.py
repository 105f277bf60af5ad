"""Error taxonomy shared by every package in the project."""

from typing import Sequence


class RefDinoError(Exception):
    """Base class for all errors raised deliberately by this project."""


class ShapeError(RefDinoError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""

    @classmethod
    def mismatch(
        cls, op: str, left: Sequence[int], right: Sequence[int]
    ) -> "ShapeError":
        return cls(f"{op}: incompatible shapes {tuple(left)} and {tuple(right)}")


class ConfigurationError(RefDinoError, ValueError):
    """A configuration value violates a module constraint."""


class ContractError(RefDinoError, RuntimeError):
    """A caller violated a documented pre-condition."""


class PropagationError(RefDinoError, FloatingPointError):
    """A NaN reached a computation that must stay finite."""


class CheckpointError(RefDinoError, OSError):
    """A tensor record or checkpoint manifest is malformed."""
