"""Public exports for configuration and report models."""

from .config import LossWeights, RunConfig
from .results import BenchReport, BenchRow, EvalResult, VideoScore

__all__ = (
    "LossWeights",
    "RunConfig",
    "BenchReport",
    "BenchRow",
    "EvalResult",
    "VideoScore",
)
