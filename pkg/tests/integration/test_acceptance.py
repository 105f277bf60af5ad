"""Quality checks on fully trained models (minutes of CPU each)."""

import numpy as np
import pytest
from scipy.stats import binomtest

from src.models.referdino import ReferDino
from src.schemas.config import RunConfig
from src.services.evaluator import evaluate
from src.services.pruning_bench import bench_pruning
from src.services.scene_generator import HELD_OUT_SEED_OFFSET, SceneGenerator
from src.services.trainer import Trainer

pytestmark = pytest.mark.slow

MOTION_EVAL_SCENES = 50


def _evaluate(model, scenes, suite="standard"):
    return evaluate(model, scenes, suite=suite, rng=np.random.default_rng(0))


@pytest.fixture(scope="module")
def overfit_run():
    """Default budget: d=64, T=6, eight fixed scenes, 2000 steps."""
    config = RunConfig()
    trainer = Trainer(config)
    trainer.train()
    generator = SceneGenerator(config.frames, config.height, config.width)
    held_out = generator.training_set(
        config.train_scenes, config.difficulty, seed=HELD_OUT_SEED_OFFSET
    )
    return trainer.model, trainer.scenes, held_out


@pytest.fixture(scope="module")
def motion_run():
    config = RunConfig(difficulty=3, train_scenes=32)
    trainer = Trainer(config)
    trainer.train()
    generator = SceneGenerator(config.frames, config.height, config.width)
    scenes = generator.suite("motion", MOTION_EVAL_SCENES)
    return trainer.model, scenes


class TestOverfit:
    def test_training_scenes(self, overfit_run):
        model, train_scenes, _ = overfit_run
        assert _evaluate(model, train_scenes).jf_mean >= 0.80

    def test_held_out_scenes(self, overfit_run):
        model, _, held_out = overfit_run
        assert _evaluate(model, held_out).jf_mean >= 0.60


class TestPruningDirection:
    def test_confidence_keeps_quality_and_random_loses_it(self, overfit_run):
        model, train_scenes, _ = overfit_run
        config = model.config
        report = bench_pruning(
            config.n_queries,
            config.decoder_layers,
            config.dim,
            [2],
            model=model,
            scenes=train_scenes,
            k_eval=2,
        )
        jf = report.jf_by_strategy
        assert jf["none"] - jf["confidence"] < 0.02
        assert jf["none"] - jf["random"] > 0.10

    def test_strategy_switch_is_restored(self, overfit_run):
        model, train_scenes, _ = overfit_run
        baseline = _evaluate(model, train_scenes[:2]).jf_mean
        model.set_pruning("random")
        model.set_pruning("confidence", k=model.config.k)
        assert _evaluate(model, train_scenes[:2]).jf_mean == baseline


class TestMotionDisambiguation:
    def test_temporal_decoder_picks_the_moving_object(self, motion_run):
        model, scenes = motion_run
        result = _evaluate(model, scenes, suite="motion")
        assert result.selection_accuracy >= 0.80

    def test_without_temporal_decoder_accuracy_is_chance(self, motion_run):
        model, scenes = motion_run
        ablated = ReferDino(model.config.with_overrides(use_temporal_decoder=False))
        ablated.load_state_dict(model.state_dict())
        accuracy = _evaluate(ablated, scenes, suite="motion").selection_accuracy
        hits = round(accuracy * len(scenes))
        assert binomtest(hits, len(scenes), 0.5).pvalue > 0.01
