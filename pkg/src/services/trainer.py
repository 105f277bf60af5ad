"""End-to-end training loop over generated scenes."""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from src.core.exceptions import ContractError, PropagationError
from src.core.logging_config import generate_run_id, get_run_id, set_run_id, set_scene_id
from src.core.metrics import record_training_step
from src.diffcore.tensor import Tape, backward
from src.models.referdino import ReferDino
from src.schemas.config import RunConfig
from src.services.checkpoint_manager import save_checkpoint
from src.services.losses import set_training_loss
from src.services.optimizer import Adam
from src.services.scene_generator import SceneGenerator, SyntheticScene

logger = logging.getLogger(__name__)

LOSS_CURVE_FILE = "loss_curve.csv"
LAST_GOOD_DIR = "last-good"
FINAL_DIR = "final"


@dataclass
class TrainingResult:
    steps: int
    losses: List[float] = field(default_factory=list)
    checkpoint: Optional[Path] = None


class Trainer:
    """Runs ``config.steps`` optimisation steps, cycling through the training scenes.

    Each step: forward every frame, match candidate trajectories to the
    targets, backpropagate and apply one Adam update.
    """

    def __init__(
        self,
        config: RunConfig,
        out_dir: Optional[Union[str, Path]] = None,
        model: Optional[ReferDino] = None,
        scenes: Optional[Sequence[SyntheticScene]] = None,
    ):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = model if model is not None else ReferDino(config)
        if scenes is None:
            generator = SceneGenerator(config.frames, config.height, config.width)
            scenes = generator.training_set(
                config.train_scenes, config.difficulty, seed=config.seed
            )
        self.scenes = list(scenes)
        self.optimizer = Adam(self.model.parameters(), lr=config.learning_rate)
        self.step_count = 0
        self._last_good = (self.model.state_dict(), 0)

    def _checkpoint(self, name: str) -> Optional[Path]:
        if self.out_dir is None:
            return None
        return save_checkpoint(
            self.out_dir / name, self.model.state_dict(), self.config, self.step_count
        )

    def _abort(self, reason: str, scene: SyntheticScene) -> PropagationError:
        """Write ``last-good`` from the snapshot and build the error to raise."""
        if self.out_dir is not None:
            state, step = self._last_good
            save_checkpoint(self.out_dir / LAST_GOOD_DIR, state, self.config, step)
        logger.error(f"aborting: {reason} at step {self.step_count} on {scene.scene_id}")
        return PropagationError(f"{reason} at step {self.step_count} on {scene.scene_id}")

    def _parameters_finite(self) -> bool:
        return all(np.isfinite(param.data).all() for param in self.model.parameters())

    def train_step(self) -> float:
        """One update on the next scene; returns the loss before the update.

        A non-finite loss, activation or gradient raises
        :class:`PropagationError`; ``last-good`` then holds the parameters
        after the last completed step.
        """
        scene = self.scenes[self.step_count % len(self.scenes)]
        set_scene_id(scene.scene_id)
        started = time.perf_counter()
        try:
            with Tape():
                output = self.model(scene.frames, scene.program_ids)
                loss = set_training_loss(
                    scene.ground_truths(), output.candidates, self.config.loss_weights
                )
                value = loss.item()
                if np.isfinite(value):
                    backward(loss)
        except PropagationError as exc:
            raise self._abort(f"non-finite activation ({exc})", scene) from exc
        except ContractError as exc:
            # the matcher rejects a NaN cost matrix
            if self._parameters_finite():
                raise
            raise self._abort(f"non-finite parameters ({exc})", scene) from exc
        if not np.isfinite(value):
            raise self._abort(f"non-finite loss {value}", scene)
        if not all(p.grad is None or np.isfinite(p.grad).all() for p in self.model.parameters()):
            raise self._abort("non-finite gradient", scene)

        self.optimizer.step()
        self.optimizer.zero_grad()
        self.step_count += 1
        self._last_good = (self.model.state_dict(), self.step_count)
        record_training_step(value, time.perf_counter() - started)
        return value

    def train(self, steps: Optional[int] = None) -> TrainingResult:
        steps = self.config.steps if steps is None else steps
        if get_run_id() is None:
            set_run_id(generate_run_id())
        result = TrainingResult(steps=0)
        logger.info(
            f"Training for {steps} steps on {len(self.scenes)} scenes "
            f"(d={self.config.dim}, T={self.config.frames}, k={self.config.k})"
        )
        for _ in range(steps):
            value = self.train_step()
            result.losses.append(value)
            if self.step_count % self.config.log_every == 0:
                logger.info(
                    f"step {self.step_count}: loss {value:.6f}",
                    extra={"step": self.step_count},
                )
            if self.step_count % self.config.checkpoint_every == 0:
                self._checkpoint(f"checkpoint-{self.step_count:06d}")
        set_scene_id(None)
        result.steps = self.step_count
        result.checkpoint = self._checkpoint(FINAL_DIR)
        if self.out_dir is not None:
            write_loss_curve(self.out_dir / LOSS_CURVE_FILE, result.losses)
        return result


def write_loss_curve(path: Union[str, Path], losses: Sequence[float]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "loss"])
        for step, value in enumerate(losses, start=1):
            writer.writerow([step, repr(float(value))])
    return path
