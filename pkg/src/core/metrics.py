"""Prometheus instrumentation for training, evaluation and pruning runs."""

from pathlib import Path
from typing import Optional, Union

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Gauge,
    Histogram,
    generate_latest,
)

# -------------------------------------------------------------------
# Metrics definitions
# -------------------------------------------------------------------

registry = CollectorRegistry()

training_steps_total = Counter(
    "training_steps_total",
    "Total number of optimizer steps taken",
    registry=registry,
)

training_loss = Gauge(
    "training_loss",
    "Loss value of the most recent optimizer step",
    registry=registry,
)

training_step_seconds = Histogram(
    "training_step_seconds",
    "Wall time of one forward/backward/update step",
    buckets=[0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0],
    registry=registry,
)

evaluation_videos_total = Counter(
    "evaluation_videos_total",
    "Total number of videos scored",
    ["suite"],
    registry=registry,
)

evaluation_jf = Gauge(
    "evaluation_jf",
    "Mean J&F of the most recent evaluation",
    ["suite"],
    registry=registry,
)

queries_retained = Histogram(
    "queries_retained",
    "Number of object queries surviving the pruned decoder",
    buckets=[1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
    registry=registry,
)

checkpoints_written_total = Counter(
    "checkpoints_written_total",
    "Total number of checkpoints written",
    registry=registry,
)


# -------------------------------------------------------------------
# Recorders
# -------------------------------------------------------------------


def record_training_step(loss: float, duration_seconds: Optional[float] = None) -> None:
    training_steps_total.inc()
    training_loss.set(loss)
    if duration_seconds is not None:
        training_step_seconds.observe(duration_seconds)


def record_evaluation(suite: str, videos: int, jf_mean: float) -> None:
    evaluation_videos_total.labels(suite=suite).inc(videos)
    evaluation_jf.labels(suite=suite).set(jf_mean)


def record_queries_retained(count: int) -> None:
    queries_retained.observe(count)


def record_checkpoint_written() -> None:
    checkpoints_written_total.inc()


def render_metrics() -> bytes:
    """Return the text exposition of every collector."""
    return generate_latest(registry)


def write_metrics(path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(render_metrics())
    return target
