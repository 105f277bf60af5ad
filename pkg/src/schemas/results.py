"""Pydantic models for evaluation and benchmark reports."""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class VideoScore(BaseModel):
    """Per-video region similarity, contour accuracy and their mean."""

    video_id: str
    j: float = Field(ge=0.0, le=1.0)
    f: float = Field(ge=0.0, le=1.0)
    jf: float = Field(ge=0.0, le=1.0)


class EvalResult(BaseModel):
    suite: str
    j_mean: float = Field(ge=0.0, le=1.0)
    f_mean: float = Field(ge=0.0, le=1.0)
    jf_mean: float = Field(ge=0.0, le=1.0)
    videos: List[VideoScore] = Field(default_factory=list)
    selection_accuracy: Optional[float] = None

    @model_validator(mode="after")
    def _check_mean(self) -> "EvalResult":
        if abs(self.jf_mean - (self.j_mean + self.f_mean) / 2.0) > 1e-12:
            raise ValueError("jf_mean must equal the mean of j_mean and f_mean")
        return self

    @classmethod
    def from_videos(
        cls,
        suite: str,
        videos: List[VideoScore],
        selection_accuracy: Optional[float] = None,
    ) -> "EvalResult":
        if videos:
            j_mean = sum(v.j for v in videos) / len(videos)
            f_mean = sum(v.f for v in videos) / len(videos)
        else:
            j_mean = f_mean = 0.0
        return cls(
            suite=suite,
            j_mean=j_mean,
            f_mean=f_mean,
            jf_mean=(j_mean + f_mean) / 2.0,
            videos=videos,
            selection_accuracy=selection_accuracy,
        )


class BenchRow(BaseModel):
    """Cost comparison of one retention divisor ``k``."""

    k: int
    drop_rate: float
    chain: List[int]
    pruned_total: int
    unpruned_total: int
    measured_ratio: float
    closed_form_ratio: Optional[float] = None
    text_total: int = 0


class BenchReport(BaseModel):
    n_queries: int
    layers: int
    dim: int
    rows: List[BenchRow]
    jf_by_strategy: Dict[str, float] = Field(default_factory=dict)
