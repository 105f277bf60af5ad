"""Inference-time choice of the output trajectory (or trajectories)."""

import logging
from typing import List, Sequence

import numpy as np

from src.core.exceptions import ContractError

logger = logging.getLogger(__name__)

MULTI_OBJECT_THRESHOLD = 0.3


def average_scores(candidates: Sequence) -> np.ndarray:
    """Per-candidate mean classification score over frames.

    Accepts prediction sequences or plain per-frame score arrays.
    """
    rows = []
    for candidate in candidates:
        scores = getattr(candidate, "scores", candidate)
        scores = getattr(scores, "data", scores)
        rows.append(float(np.mean(np.asarray(scores, dtype=np.float64))))
    return np.asarray(rows, dtype=np.float64)


def select_best(candidates: Sequence) -> int:
    """Highest average score; ties go to the lowest index."""
    if len(candidates) == 0:
        raise ContractError("select_best needs at least one candidate")
    return int(np.argmax(average_scores(candidates)))


def select_multi(candidates: Sequence, threshold: float = MULTI_OBJECT_THRESHOLD) -> List[int]:
    """All candidates whose average score is strictly above ``threshold``."""
    if len(candidates) == 0:
        return []
    means = average_scores(candidates)
    return [int(i) for i in np.flatnonzero(means > threshold)]


def merge_masks(masks: np.ndarray, scores: np.ndarray, height: int, width: int) -> np.ndarray:
    """Label map of selected trajectories; overlaps go to the higher score.

    Args:
        masks: ``n×h×w`` binary masks of the selected trajectories
        scores: ``n`` classification scores

    Returns:
        ``h×w`` integer labels, ``-1`` where no trajectory covers the pixel.
    """
    masks = np.asarray(masks, dtype=bool).reshape(-1, height, width)
    labels = np.full((height, width), -1, dtype=np.int64)
    if masks.shape[0] == 0:
        return labels
    scores = np.asarray(scores, dtype=np.float64)
    ranked = np.where(masks, scores[:, None, None], -np.inf)
    owner = np.argmax(ranked, axis=0)
    covered = masks.any(axis=0)
    labels[covered] = owner[covered]
    return labels
