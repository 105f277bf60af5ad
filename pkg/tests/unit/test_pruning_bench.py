"""Unit tests for the pruning cost benchmark."""

import pytest

from src.models.query_decoder import CostLedger
from src.services.pruning_bench import bench_pruning, bench_row, drop_rate, measured_ledger


class TestBenchRow:
    def test_reference_configuration(self):
        row = bench_row(900, 6, 256, 2)
        assert row.chain == [900, 450, 225, 113, 57, 29]
        assert row.measured_ratio == pytest.approx(0.24576, abs=1e-5)
        assert row.drop_rate == 0.5
        assert row.measured_ratio <= row.closed_form_ratio

    def test_no_pruning_costs_the_baseline(self):
        row = bench_row(64, 4, 32, 1)
        assert row.measured_ratio == 1.0
        assert row.closed_form_ratio is None
        assert row.pruned_total == row.unpruned_total

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_larger_divisor_is_cheaper(self, k):
        assert bench_row(900, 6, 256, k + 1).pruned_total < bench_row(900, 6, 256, k).pruned_total


def test_drop_rates():
    assert [drop_rate(k) for k in (1, 2, 4)] == [0.0, 0.5, 0.75]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_decoded_ledger_matches_plan(k):
    measured = measured_ledger(16, 3, 8, k, heads=2)
    assert measured.chain == CostLedger.plan(16, 3, 8, k).chain
    assert measured.total == CostLedger.plan(16, 3, 8, k).total


def test_report_without_model():
    report = bench_pruning(900, 6, 256, [2, 3, 4])
    assert [row.k for row in report.rows] == [2, 3, 4]
    assert report.jf_by_strategy == {}
    assert report.model_dump()["n_queries"] == 900


def test_measured_report_matches_plan():
    planned = bench_pruning(16, 3, 8, [2, 3])
    measured = bench_pruning(16, 3, 8, [2, 3], measure=True)
    for plan_row, decoded_row in zip(planned.rows, measured.rows):
        assert decoded_row.chain == plan_row.chain
        assert decoded_row.pruned_total == plan_row.pruned_total
        assert decoded_row.measured_ratio == plan_row.measured_ratio
        # the decode also attends to the text tokens
        assert decoded_row.text_total > 0
