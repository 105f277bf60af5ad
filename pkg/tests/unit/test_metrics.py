"""Unit tests for the Prometheus instrumentation."""

from src.core import metrics


def _sample(name, labels=None):
    return metrics.registry.get_sample_value(name, labels or {})


def test_training_step_updates_counter_and_gauge():
    before = _sample("training_steps_total") or 0.0
    metrics.record_training_step(1.25, duration_seconds=0.2)
    assert _sample("training_steps_total") == before + 1
    assert _sample("training_loss") == 1.25


def test_evaluation_is_labelled_by_suite():
    before = _sample("evaluation_videos_total", {"suite": "motion"}) or 0.0
    metrics.record_evaluation("motion", 4, 0.5)
    assert _sample("evaluation_videos_total", {"suite": "motion"}) == before + 4
    assert _sample("evaluation_jf", {"suite": "motion"}) == 0.5


def test_write_metrics(tmp_path):
    metrics.record_queries_retained(8)
    path = metrics.write_metrics(tmp_path / "out" / "metrics.prom")
    text = path.read_text()
    assert "queries_retained_bucket" in text
    assert "training_steps_total" in text
