import os
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

os.environ.setdefault("DISABLE_FILE_LOGS", "1")

from src.core.app_context import app_context  # noqa: E402
from src.diffcore.tensor import reset_default_tape  # noqa: E402
from src.schemas.config import RunConfig  # noqa: E402


@pytest.fixture(autouse=True)
def fresh_state():
    """Each test starts on an empty default tape with re-read settings."""
    reset_default_tape()
    app_context.reset()
    yield
    reset_default_tape()
    app_context.reset()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_config() -> RunConfig:
    """A configuration small enough for a forward pass in well under a second."""
    return RunConfig(
        dim=16,
        heads=2,
        n_queries=8,
        decoder_layers=2,
        k=2,
        min_queries=4,
        temporal_blocks=1,
        mask_blocks=1,
        num_points=4,
        frames=2,
        height=32,
        width=32,
        difficulty=1,
        train_scenes=2,
        steps=2,
        checkpoint_every=1,
        log_every=1,
    )


@pytest.fixture
def tiny_model(small_config):
    from src.models.referdino import ReferDino

    return ReferDino(small_config)


@pytest.fixture
def small_scene(small_config):
    from src.services.scene_generator import SceneGenerator

    generator = SceneGenerator(small_config.frames, small_config.height, small_config.width)
    return generator.generate(seed=3, difficulty=1)
