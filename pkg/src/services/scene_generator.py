"""Synthetic moving-shape clips with text programs referring to some of the shapes.

Shapes are rasterised with OpenCV on a black canvas; later objects occlude
earlier ones.  Every scene carries the program that refers to its target
object(s), and generation re-draws until the program resolves to exactly the
targets and every target stays visible in every frame.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import cv2
import numpy as np

from src.core.exceptions import ConfigurationError, ContractError
from src.models.vocabulary import COLORS, SHAPES, encode_program
from src.services.losses import GroundTruthSequence

logger = logging.getLogger(__name__)

DOWNSAMPLE = 4
MAX_ATTEMPTS = 200
NOISE_STD = 0.02
MIN_RADIUS = 5
MAX_RADIUS = 8
LINEAR_SPEED = 3.0  # pixels per frame
ORBIT_RADIUS = 6.0
SHRINK_RATE = 0.12  # fraction of the start radius lost per frame, capped
SUITES = ("standard", "motion", "attribute")
HELD_OUT_SEED_OFFSET = 10_000

COLOR_RGB: Dict[str, Tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
}

LINEAR_DIRECTIONS = {
    "moving-left": (-1.0, 0.0),
    "moving-right": (1.0, 0.0),
    "moving-up": (0.0, -1.0),
    "moving-down": (0.0, 1.0),
}
MOTION_WORDS = ("static", *LINEAR_DIRECTIONS, "orbiting", "shrinking")


@dataclass
class SceneObject:
    shape: str
    color: str
    radius: float
    motion: str
    start: Tuple[float, float]
    phase: float = 0.0

    @property
    def trajectory_kind(self) -> str:
        if self.motion in LINEAR_DIRECTIONS:
            return "linear"
        return {"static": "static", "orbiting": "orbit", "shrinking": "shrink"}[self.motion]

    def pose(self, t: int) -> Tuple[float, float, float]:
        """Centre ``(x, y)`` and radius at frame ``t``."""
        x, y = self.start
        radius = self.radius
        if self.motion in LINEAR_DIRECTIONS:
            dx, dy = LINEAR_DIRECTIONS[self.motion]
            x, y = x + dx * LINEAR_SPEED * t, y + dy * LINEAR_SPEED * t
        elif self.motion == "orbiting":
            angle = self.phase + t * (2.0 * np.pi / 6.0)
            x, y = x + ORBIT_RADIUS * np.cos(angle), y + ORBIT_RADIUS * np.sin(angle)
        elif self.motion == "shrinking":
            radius = self.radius * max(0.45, 1.0 - SHRINK_RATE * t)
        return x, y, radius


@dataclass
class SyntheticScene:
    scene_id: str
    seed: int
    difficulty: int
    frames: np.ndarray  # T × H × W × 3 in [0, 1]
    objects: List[SceneObject]
    targets: List[int]
    program: List[str]
    object_masks: np.ndarray  # n_objects × T × H × W visible (post-occlusion) masks
    extras: Dict[str, str] = field(default_factory=dict)

    @property
    def program_ids(self) -> List[int]:
        return encode_program(self.program)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def is_multi_target(self) -> bool:
        return len(self.targets) > 1

    def masks_at_stride(self) -> np.ndarray:
        """Visible masks of every object at ``H/4 × W/4``."""
        return np.stack([downsample_mask(m) for m in self.object_masks])

    def target_masks(self) -> np.ndarray:
        """Union of the target masks at ``H/4``, ``T × h × w``."""
        return self.masks_at_stride()[self.targets].any(axis=0)

    def ground_truths(self) -> List[GroundTruthSequence]:
        low = self.masks_at_stride()
        sequences = []
        for index in self.targets:
            boxes = np.stack([mask_to_box(m) for m in self.object_masks[index]])
            sequences.append(
                GroundTruthSequence(
                    present=np.ones(self.num_frames, dtype=bool),
                    boxes=boxes,
                    masks=low[index].astype(np.float64),
                )
            )
        return sequences


# ---------------------------------------------------------------------
# Raster helpers
# ---------------------------------------------------------------------


def downsample_mask(masks: np.ndarray) -> np.ndarray:
    """``… × H × W`` binary → ``… × H/4 × W/4`` by 4×4 majority (mean > 0.5)."""
    masks = np.asarray(masks, dtype=np.float64)
    *lead, h, w = masks.shape
    blocks = masks.reshape(*lead, h // DOWNSAMPLE, DOWNSAMPLE, w // DOWNSAMPLE, DOWNSAMPLE)
    return blocks.mean(axis=(-3, -1)) > 0.5


def mask_to_box(mask: np.ndarray) -> np.ndarray:
    """Normalised cxcywh box of a nonempty binary mask."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ContractError("box requested for an empty mask")
    x0, x1 = xs.min() / w, (xs.max() + 1) / w
    y0, y1 = ys.min() / h, (ys.max() + 1) / h
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0])


def draw_shape(
    shape: str, x: float, y: float, radius: float, height: int, width: int
) -> np.ndarray:
    canvas = np.zeros((height, width), dtype=np.uint8)
    cx, cy, r = int(round(x)), int(round(y)), max(1, int(round(radius)))
    if shape == "circle":
        cv2.circle(canvas, (cx, cy), r, 1, thickness=-1)
    elif shape == "square":
        cv2.rectangle(canvas, (cx - r, cy - r), (cx + r, cy + r), 1, thickness=-1)
    elif shape == "triangle":
        points = np.array([[cx, cy - r], [cx - r, cy + r], [cx + r, cy + r]], dtype=np.int32)
        cv2.fillPoly(canvas, [points], 1)
    else:
        raise ConfigurationError(f"unknown shape {shape!r}")
    return canvas.astype(bool)


def render(
    objects: Sequence[SceneObject],
    frames: int,
    height: int,
    width: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw all objects; returns the clip and the visible mask of each object."""
    video = np.zeros((frames, height, width, 3))
    visible = np.zeros((len(objects), frames, height, width), dtype=bool)
    for t in range(frames):
        claimed = np.zeros((height, width), dtype=bool)
        for index in reversed(range(len(objects))):
            obj = objects[index]
            x, y, radius = obj.pose(t)
            mask = draw_shape(obj.shape, x, y, radius, height, width) & ~claimed
            visible[index, t] = mask
            claimed |= mask
            video[t][mask] = COLOR_RGB[obj.color]
    video += rng.normal(0.0, NOISE_STD, size=video.shape)
    return np.clip(video, 0.0, 1.0), visible


def stays_on_canvas(obj: SceneObject, frames: int, height: int, width: int) -> bool:
    for t in range(frames):
        x, y, radius = obj.pose(t)
        if x - radius < 1 or y - radius < 1 or x + radius > width - 2 or y + radius > height - 2:
            return False
    return True


# ---------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------


def resolve_targets(objects: Sequence[SceneObject], program: Sequence[str]) -> List[int]:
    """Objects matching every attribute word of ``program``.

    Without ``all`` the program must single out one object; otherwise an
    empty list is returned.
    """
    colors = [w for w in program if w in COLORS]
    shapes = [w for w in program if w in SHAPES]
    motions = [w for w in program if w in MOTION_WORDS]
    matches = [
        i
        for i, obj in enumerate(objects)
        if all(obj.color == c for c in colors)
        and all(obj.shape == s for s in shapes)
        and all(obj.motion == m for m in motions)
    ]
    if "all" not in program and len(matches) != 1:
        return []
    return matches


class SceneGenerator:
    """Deterministic scene factory: the same seed always yields the same scene."""

    def __init__(self, frames: int = 6, height: int = 64, width: int = 64):
        if height % 8 or width % 8:
            raise ConfigurationError(f"scene size {height}x{width} must be divisible by 8")
        self.frames = frames
        self.height = height
        self.width = width

    # -- object sampling ------------------------------------------------

    def _place(
        self, rng: np.random.Generator, shape: str, color: str, motion: str
    ) -> SceneObject:
        for _ in range(MAX_ATTEMPTS):
            radius = float(rng.uniform(MIN_RADIUS, MAX_RADIUS))
            start = (
                float(rng.uniform(radius + 2, self.width - radius - 3)),
                float(rng.uniform(radius + 2, self.height - radius - 3)),
            )
            phase = float(rng.uniform(0, 2 * np.pi))
            obj = SceneObject(shape, color, radius, motion, start, phase)
            if stays_on_canvas(obj, self.frames, self.height, self.width):
                return obj
        raise ContractError(f"could not keep a {motion} {shape} on the canvas")

    def _distractor(
        self,
        rng: np.random.Generator,
        colors: Sequence[str] = COLORS,
        shapes: Sequence[str] = SHAPES,
    ) -> SceneObject:
        return self._place(
            rng, _pick(rng, shapes), _pick(rng, colors), _pick(rng, MOTION_WORDS)
        )

    def _layout(self, rng: np.random.Generator, difficulty: int, suite: str):
        """Objects (in drawing order) and program words for one attempt."""
        if suite == "attribute":
            color = _pick(rng, COLORS)
            others = [c for c in COLORS if c != color]
            objects = [self._distractor(rng, colors=[color]) for _ in range(2)]
            objects += [
                self._distractor(rng, colors=others) for _ in range(rng.integers(1, 4))
            ]
            return _shuffled(rng, objects), ["all", color, "objects"]

        if difficulty == 0:
            obj = self._place(rng, _pick(rng, SHAPES), _pick(rng, COLORS), "static")
            return [obj], [obj.color]

        if difficulty == 3 or suite == "motion":
            color, shape = _pick(rng, COLORS), _pick(rng, SHAPES)
            moving = _pick(rng, tuple(LINEAR_DIRECTIONS))
            others = [c for c in COLORS if c != color]
            objects = [
                self._place(rng, shape, color, moving),
                self._place(rng, shape, color, "static"),
            ]
            objects += [
                self._distractor(rng, colors=others) for _ in range(rng.integers(0, 3))
            ]
            return _shuffled(rng, objects), [color, shape, moving]

        target = self._distractor(rng)
        objects = [target]
        if difficulty == 1:
            for _ in range(rng.integers(1, 3)):
                used = {o.color for o in objects}
                objects.append(
                    self._distractor(rng, colors=[c for c in COLORS if c not in used])
                )
            program = [target.color, target.shape, target.motion]
        else:
            # every distractor shares exactly one attribute with the target
            for _ in range(rng.integers(2, 5)):
                if rng.random() < 0.5:
                    shapes = [s for s in SHAPES if s != target.shape]
                    objects.append(
                        self._distractor(rng, colors=[target.color], shapes=shapes)
                    )
                else:
                    colors = [c for c in COLORS if c != target.color]
                    objects.append(
                        self._distractor(rng, colors=colors, shapes=[target.shape])
                    )
            program = [target.color, target.shape]
        return _shuffled(rng, objects), program

    # -- public ---------------------------------------------------------

    def generate(
        self, seed: int, difficulty: int = 1, suite: str = "standard"
    ) -> SyntheticScene:
        if suite not in SUITES:
            raise ConfigurationError(f"unknown suite {suite!r}")
        if not 0 <= difficulty <= 3:
            raise ConfigurationError(f"difficulty must be within 0..3, got {difficulty}")
        motion_only = difficulty == 3 or suite == "motion"
        rng = np.random.default_rng(seed)
        for attempt in range(MAX_ATTEMPTS):
            objects, program = self._layout(rng, difficulty, suite)
            targets = resolve_targets(objects, program)
            if not targets or (motion_only and not _motion_only(objects, program)):
                continue
            video, visible = render(objects, self.frames, self.height, self.width, rng)
            low = downsample_mask(visible[targets])
            if not low.reshape(len(targets), self.frames, -1).any(axis=-1).all():
                continue
            logger.debug(f"scene seed={seed} accepted after {attempt + 1} attempts")
            return SyntheticScene(
                scene_id=f"{suite}-{seed}",
                seed=seed,
                difficulty=difficulty,
                frames=video,
                objects=objects,
                targets=targets,
                program=program,
                object_masks=visible,
            )
        raise ContractError(f"no valid scene for seed={seed}, difficulty={difficulty}")

    def suite(
        self, name: str, count: int, seed: int = HELD_OUT_SEED_OFFSET
    ) -> List[SyntheticScene]:
        """Evaluation scenes.

        ``standard`` cycles difficulties 0-2, ``motion`` holds motion-only
        scenes and ``attribute`` refers to several objects at once.
        """
        if name not in SUITES:
            raise ConfigurationError(f"unknown suite {name!r}")
        scenes = []
        for index in range(count):
            difficulty = {"standard": index % 3, "motion": 3, "attribute": 1}[name]
            scenes.append(self.generate(seed + index, difficulty, name))
        return scenes

    def training_set(self, count: int, difficulty: int, seed: int = 0) -> List[SyntheticScene]:
        return [self.generate(seed + index, difficulty) for index in range(count)]


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _shuffled(rng: np.random.Generator, objects: List[SceneObject]) -> List[SceneObject]:
    return [objects[i] for i in rng.permutation(len(objects))]


def _motion_only(objects: Sequence[SceneObject], program: Sequence[str]) -> bool:
    """Attributes alone are ambiguous and the motion word disambiguates."""
    attributes = [w for w in program if w in COLORS or w in SHAPES]
    ambiguous = len(resolve_targets(objects, [*attributes, "all"])) >= 2
    return ambiguous and len(resolve_targets(objects, program)) == 1


def generate_scene(
    seed: int, difficulty: int = 1, frames: int = 6, height: int = 64, width: int = 64
) -> SyntheticScene:
    return SceneGenerator(frames, height, width).generate(seed, difficulty)
