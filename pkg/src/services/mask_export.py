"""Mask export: run-length text files and portable graymap previews."""

import logging
from pathlib import Path
from typing import List, Union

import cv2
import numpy as np

from src.core.exceptions import ShapeError

logger = logging.getLogger(__name__)


def encode_runs(mask: np.ndarray) -> List[int]:
    """Row-major run lengths, starting with a (possibly empty) background run."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    runs: List[int] = []
    current, length = False, 0
    for value in flat:
        if value == current:
            length += 1
        else:
            runs.append(length)
            current, length = bool(value), 1
    runs.append(length)
    return runs


def decode_runs(runs: List[int], height: int, width: int) -> np.ndarray:
    if sum(runs) != height * width:
        raise ShapeError(f"runs cover {sum(runs)} pixels, expected {height * width}")
    values = np.repeat(np.arange(len(runs)) % 2 == 1, runs)
    return values.reshape(height, width)


def write_rle(path: Union[str, Path], masks: np.ndarray) -> Path:
    """One line per frame: ``frame_id`` followed by its run lengths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        " ".join(str(v) for v in [frame_id, *encode_runs(mask)])
        for frame_id, mask in enumerate(masks)
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_rle(path: Union[str, Path], height: int, width: int) -> np.ndarray:
    frames = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        numbers = [int(v) for v in line.split()]
        frames.append(decode_runs(numbers[1:], height, width))
    return np.stack(frames) if frames else np.zeros((0, height, width), dtype=bool)


def write_pgm_frames(
    directory: Union[str, Path], masks: np.ndarray, prefix: str = "mask"
) -> List[Path]:
    """Save each frame as an 8-bit PGM (255 = foreground)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame_id, mask in enumerate(masks):
        target = directory / f"{prefix}_{frame_id:03d}.pgm"
        if not cv2.imwrite(str(target), np.asarray(mask, dtype=np.uint8) * 255):
            logger.warning(f"Could not write {target}")
            continue
        paths.append(target)
    return paths
