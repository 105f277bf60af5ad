"""Unit tests for the run configuration."""

import pytest

from src.core.exceptions import ConfigurationError
from src.schemas.config import LossWeights, RunConfig


class TestRunConfig:
    def test_defaults_are_valid(self):
        config = RunConfig()
        assert config.dim % config.heads == 0
        assert config.loss_weights == LossWeights()

    def test_from_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text(
            "# small run\n"
            "dim=32\n"
            "heads=4\n"
            "k=3\n"
            "use_tracker=false\n"
            "learning_rate=0.01\n"
            "alpha=\n"
        )
        config = RunConfig.from_file(path)
        assert config.dim == 32
        assert config.k == 3
        assert config.use_tracker is False
        assert config.learning_rate == 0.01
        assert config.alpha == 0.1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            RunConfig.from_file(tmp_path / "absent.env")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config keys: colour"):
            RunConfig.from_mapping({"colour": "red"})

    @pytest.mark.parametrize(
        "values",
        [
            {"dim": 30, "heads": 3},
            {"dim": 12, "heads": 4},
            {"height": 60},
            {"n_queries": 100, "height": 64, "width": 64},
            {"alpha": 1.5},
            {"difficulty": 4},
            {"pruning": "magnitude"},
        ],
    )
    def test_invalid_values_rejected(self, values):
        with pytest.raises(ConfigurationError):
            RunConfig.from_mapping(values)

    def test_to_lines_round_trip(self, tmp_path):
        config = RunConfig(dim=16, heads=2, use_deformable=False, seed=9)
        path = tmp_path / "config.env"
        path.write_text(config.to_lines())
        assert RunConfig.from_file(path) == config

    def test_overrides_are_validated(self):
        config = RunConfig().with_overrides(seed=3)
        assert config.seed == 3
        with pytest.raises(ConfigurationError):
            config.with_overrides(heads=5)

    def test_loss_weights_follow_lambdas(self):
        weights = RunConfig(lambda_cls=1.0, lambda_proj=0.0).loss_weights
        assert weights.classification == 1.0
        assert weights.proj == 0.0
        assert weights.giou == 2.0
