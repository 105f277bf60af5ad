"""Region similarity (J), contour accuracy (F) and the evaluation runner."""

import csv
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import cv2
import numpy as np

from src.core.exceptions import ShapeError
from src.core.logging_config import set_scene_id
from src.core.metrics import record_evaluation
from src.diffcore.tensor import no_grad
from src.schemas.results import EvalResult, VideoScore
from src.services.selection import merge_masks, select_best, select_multi

logger = logging.getLogger(__name__)

# 4-neighbourhood structuring element for boundary extraction
CROSS_KERNEL = cv2.getStructuringElement(cv2.MORPH_CROSS, (3, 3))
# Chebyshev radius-1 neighbourhood for the boundary match tolerance
TOLERANCE_KERNEL = np.ones((3, 3), dtype=np.uint8)


def _check_extents(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ShapeError.mismatch("mask metric", pred.shape, gt.shape)


def region_similarity(pred, gt) -> float:
    """Intersection over union of two binary masks; two empty masks score 1."""
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    _check_extents(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of ``mask`` removed by one 4-neighbourhood erosion (outside counts as 0)."""
    mask = np.asarray(mask, dtype=np.uint8)
    eroded = cv2.erode(
        mask, CROSS_KERNEL, borderType=cv2.BORDER_CONSTANT, borderValue=0
    )
    return (mask > 0) & (eroded == 0)


def contour_accuracy(pred, gt) -> float:
    """Boundary F-measure with a one-pixel (Chebyshev) match tolerance."""
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    _check_extents(pred, gt)
    pred_b, gt_b = boundary(pred), boundary(gt)
    n_pred, n_gt = int(pred_b.sum()), int(gt_b.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    gt_near = cv2.dilate(gt_b.astype(np.uint8), TOLERANCE_KERNEL) > 0
    pred_near = cv2.dilate(pred_b.astype(np.uint8), TOLERANCE_KERNEL) > 0
    precision = float((pred_b & gt_near).sum()) / n_pred
    recall = float((gt_b & pred_near).sum()) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def score_video(video_id: str, pred_masks, gt_masks) -> VideoScore:
    """Frame-averaged J and F of a ``T×h×w`` prediction."""
    pred_masks = np.asarray(pred_masks, dtype=bool)
    gt_masks = np.asarray(gt_masks, dtype=bool)
    _check_extents(pred_masks, gt_masks)
    j = float(np.mean([region_similarity(p, g) for p, g in zip(pred_masks, gt_masks)]))
    f = float(np.mean([contour_accuracy(p, g) for p, g in zip(pred_masks, gt_masks)]))
    return VideoScore(video_id=video_id, j=j, f=f, jf=(j + f) / 2.0)


# ---------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------


def predict_masks(model, scene, rng: Optional[np.random.Generator] = None):
    """Binary ``T×h×w`` prediction of ``model`` for ``scene`` and the chosen indices."""
    with no_grad():
        output = model(scene.frames, scene.program_ids, rng)
    candidates = output.candidates
    if scene.is_multi_target:
        chosen = select_multi(candidates)
    else:
        chosen = [select_best(candidates)]

    frames = scene.num_frames
    h, w = candidates[0].masks.shape[1:]
    prediction = np.zeros((frames, h, w), dtype=bool)
    if chosen:
        masks = np.stack([candidates[i].masks.data > 0.0 for i in chosen])
        scores = np.array([candidates[i].mean_score for i in chosen])
        for t in range(frames):
            prediction[t] = merge_masks(masks[:, t], scores, h, w) >= 0
    return prediction, chosen


def selected_target(scene, prediction: np.ndarray) -> bool:
    """True when the prediction overlaps a target more than any other object."""
    per_object = scene.masks_at_stride()
    overlaps = [
        np.mean([region_similarity(p, g) for p, g in zip(prediction, masks)])
        for masks in per_object
    ]
    best = int(np.argmax(overlaps))
    return best in scene.targets and overlaps[best] > 0.0


def evaluate(
    model,
    scenes: Sequence,
    suite: str = "standard",
    rng: Optional[np.random.Generator] = None,
) -> EvalResult:
    """Run inference on every scene and aggregate J, F and J&F."""
    videos: List[VideoScore] = []
    hits = 0
    for scene in scenes:
        set_scene_id(scene.scene_id)
        prediction, chosen = predict_masks(model, scene, rng)
        score = score_video(scene.scene_id, prediction, scene.target_masks())
        videos.append(score)
        hits += int(selected_target(scene, prediction))
        logger.debug(f"{scene.scene_id}: chose {chosen}, J&F={score.jf:.3f}")
    set_scene_id(None)

    accuracy = hits / len(scenes) if scenes else None
    result = EvalResult.from_videos(suite, videos, selection_accuracy=accuracy)
    record_evaluation(suite, len(videos), result.jf_mean)
    logger.info(
        f"evaluated {len(videos)} {suite} videos: J={result.j_mean:.3f} "
        f"F={result.f_mean:.3f} J&F={result.jf_mean:.3f}"
    )
    return result


def write_report(result: EvalResult, path: Union[str, Path]) -> Path:
    """CSV with one ``video_id, J, F, J&F`` row per video."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["video_id", "J", "F", "J&F"])
        for video in result.videos:
            writer.writerow(
                [video.video_id, f"{video.j:.6f}", f"{video.f:.6f}", f"{video.jf:.6f}"]
            )
    return path
