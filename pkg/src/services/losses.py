"""Sequence-level matching cost and the training loss stack.

A candidate sequence is scored against the ground truth frame by frame:
focal loss on the classification score, L1 + GIoU on the box, and DICE +
mask focal + projection losses on the mask.  Box and mask terms only count on
frames where the referred object is present, and the sum is divided by the
number of frames.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor, as_tensor, no_grad
from src.schemas.config import LossWeights
from src.services.matcher import hungarian

logger = logging.getLogger(__name__)

FOCAL_GAMMA = 2.0
FOCAL_BALANCE = 0.25
PROBABILITY_CLAMP = 1e-7
DICE_EPS = 1.0


@dataclass
class PredictionSequence:
    """One candidate trajectory: scores ``T``, boxes ``T×4`` (cxcywh), mask logits ``T×h×w``."""

    scores: DiffTensor
    boxes: DiffTensor
    masks: DiffTensor

    def __post_init__(self):
        t = self.scores.shape[0]
        if self.boxes.shape != (t, 4) or self.masks.ndim != 3 or self.masks.shape[0] != t:
            raise ShapeError(
                f"prediction streams disagree: scores {self.scores.shape}, "
                f"boxes {self.boxes.shape}, masks {self.masks.shape}"
            )

    @property
    def frames(self) -> int:
        return self.scores.shape[0]

    @property
    def mean_score(self) -> float:
        return float(self.scores.data.mean())


@dataclass
class GroundTruthSequence:
    present: np.ndarray  # T bools
    boxes: np.ndarray  # T × 4 cxcywh
    masks: np.ndarray  # T × h × w binary

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.float64)
        t = self.present.shape[0]
        if self.boxes.shape != (t, 4) or self.masks.shape[0] != t:
            raise ShapeError(
                f"ground truth streams disagree: present {self.present.shape}, "
                f"boxes {self.boxes.shape}, masks {self.masks.shape}"
            )
        sizes = self.boxes[self.present, 2:]
        if (sizes <= 0).any():
            raise ShapeError("ground-truth box with non-positive size on a present frame")

    @property
    def frames(self) -> int:
        return self.present.shape[0]


# ---------------------------------------------------------------------
# Elementary losses
# ---------------------------------------------------------------------


def focal_terms(
    p: DiffTensor,
    target,
    gamma: float = FOCAL_GAMMA,
    balance: float = FOCAL_BALANCE,
) -> DiffTensor:
    """Elementwise focal loss of probabilities ``p`` against 0/1 targets."""
    p = F.clamp(as_tensor(p), PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    q = F.sub(1.0, p)
    positive = F.scale(F.mul(F.power(q, gamma), F.log(p)), -balance)
    negative = F.scale(F.mul(F.power(p, gamma), F.log(q)), -(1.0 - balance))
    return F.add(F.mul(positive, target), F.mul(negative, 1.0 - target))


def focal_loss(
    p: DiffTensor,
    target,
    gamma: float = FOCAL_GAMMA,
    balance: float = FOCAL_BALANCE,
) -> DiffTensor:
    """Mean focal loss; a scalar ``p`` gives the plain per-sample value."""
    return F.mean(focal_terms(p, target, gamma, balance))


def sigmoid_focal_terms(
    logits: DiffTensor,
    target: np.ndarray,
    gamma: float = FOCAL_GAMMA,
    balance: float = FOCAL_BALANCE,
) -> DiffTensor:
    """Focal loss on logits, using ``log_sigmoid`` for saturated pixels."""
    p = F.sigmoid(logits)
    q = F.sub(1.0, p)
    positive = F.scale(F.mul(F.power(q, gamma), F.log_sigmoid(logits)), -balance)
    negative = F.scale(
        F.mul(F.power(p, gamma), F.log_sigmoid(F.scale(logits, -1.0))), -(1.0 - balance)
    )
    return F.add(F.mul(positive, target), F.mul(negative, 1.0 - target))


def dice_loss(a: DiffTensor, b) -> DiffTensor:
    """``1 − (2Σab + 1)/(Σa + Σb + 1)``; symmetric in its arguments."""
    a, b = as_tensor(a), as_tensor(b)
    overlap = F.add(F.scale(F.sum_(F.mul(a, b)), 2.0), DICE_EPS)
    total = F.add(F.add(F.sum_(a), F.sum_(b)), DICE_EPS)
    return F.sub(1.0, F.div(overlap, total))


def box_corners(box: DiffTensor) -> Tuple[DiffTensor, DiffTensor, DiffTensor, DiffTensor]:
    box = as_tensor(box)
    cx, cy, w, h = box[0], box[1], box[2], box[3]
    half_w, half_h = F.scale(w, 0.5), F.scale(h, 0.5)
    return F.sub(cx, half_w), F.sub(cy, half_h), F.add(cx, half_w), F.add(cy, half_h)


def generalized_iou(pred: DiffTensor, gt) -> DiffTensor:
    """GIoU of two cxcywh boxes, computed on corners."""
    px1, py1, px2, py2 = box_corners(pred)
    gx1, gy1, gx2, gy2 = box_corners(gt)
    inter_w = F.relu(F.sub(F.minimum(px2, gx2), F.maximum(px1, gx1)))
    inter_h = F.relu(F.sub(F.minimum(py2, gy2), F.maximum(py1, gy1)))
    intersection = F.mul(inter_w, inter_h)
    area_p = F.mul(F.sub(px2, px1), F.sub(py2, py1))
    area_g = F.mul(F.sub(gx2, gx1), F.sub(gy2, gy1))
    union = F.sub(F.add(area_p, area_g), intersection)
    enclosing = F.mul(
        F.sub(F.maximum(px2, gx2), F.minimum(px1, gx1)),
        F.sub(F.maximum(py2, gy2), F.minimum(py1, gy1)),
    )
    iou = F.div(intersection, union)
    return F.sub(iou, F.div(F.sub(enclosing, union), enclosing))


def box_loss(pred: DiffTensor, gt, weights: Optional[LossWeights] = None) -> DiffTensor:
    """``λ_L1·‖pred − gt‖₁ + λ_giou·(1 − GIoU)``."""
    weights = weights or LossWeights()
    pred, gt = as_tensor(pred), as_tensor(gt)
    l1 = F.sum_(F.abs_(F.sub(pred, gt)))
    giou = generalized_iou(pred, gt)
    return F.add(F.scale(l1, weights.l1), F.scale(F.sub(1.0, giou), weights.giou))


def rasterize_box(box, height: int, width: int) -> np.ndarray:
    """Binary mask of the pixels whose centres fall inside a cxcywh box."""
    cx, cy, w, h = np.asarray(box, dtype=np.float64)
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    inside_x = (xs >= cx - w / 2) & (xs <= cx + w / 2)
    inside_y = (ys >= cy - h / 2) & (ys <= cy + h / 2)
    return (inside_y[:, None] & inside_x[None, :]).astype(np.float64)


def projection_loss(prob: DiffTensor, gt_box) -> DiffTensor:
    """DICE between axis max-projections of the soft mask and of the box raster."""
    h, w = prob.shape
    target = rasterize_box(gt_box, h, w)
    along_x = dice_loss(F.max_(prob, axis=0), target.max(axis=0))
    along_y = dice_loss(F.max_(prob, axis=1), target.max(axis=1))
    return F.add(along_x, along_y)


def mask_loss(
    logits: DiffTensor,
    gt_mask,
    gt_box,
    weights: Optional[LossWeights] = None,
) -> DiffTensor:
    weights = weights or LossWeights()
    logits = as_tensor(logits)
    gt_mask = np.asarray(gt_mask, dtype=np.float64)
    if gt_mask.shape != logits.shape:
        raise ShapeError.mismatch("mask_loss", logits.shape, gt_mask.shape)
    prob = F.sigmoid(logits)
    dice = dice_loss(prob, gt_mask)
    focal = F.mean(sigmoid_focal_terms(logits, gt_mask))
    projection = projection_loss(prob, gt_box)
    return F.add(
        F.add(F.scale(dice, weights.dice), F.scale(focal, weights.focal)),
        F.scale(projection, weights.proj),
    )


# ---------------------------------------------------------------------
# Sequence cost and training loss
# ---------------------------------------------------------------------


def matching_cost(
    gt: GroundTruthSequence,
    pred: PredictionSequence,
    weights: Optional[LossWeights] = None,
) -> DiffTensor:
    """Frame-normalised sequence cost; box and mask terms skip absent frames."""
    weights = weights or LossWeights()
    if gt.frames != pred.frames:
        raise ShapeError.mismatch("matching_cost", (gt.frames,), (pred.frames,))
    total: DiffTensor = DiffTensor(0.0)
    for t in range(gt.frames):
        present = float(gt.present[t])
        frame_cost = F.scale(focal_loss(pred.scores[t], present), weights.classification)
        if gt.present[t]:
            frame_cost = F.add(frame_cost, box_loss(pred.boxes[t], gt.boxes[t], weights))
            frame_cost = F.add(
                frame_cost, mask_loss(pred.masks[t], gt.masks[t], gt.boxes[t], weights)
            )
        total = F.add(total, frame_cost)
    return F.scale(total, 1.0 / gt.frames)


def negative_loss(pred: PredictionSequence, weights: Optional[LossWeights] = None) -> DiffTensor:
    """Frame-averaged focal loss pushing every score toward 0."""
    weights = weights or LossWeights()
    return F.scale(focal_loss(pred.scores, 0.0), weights.classification)


def cost_matrix(
    gts: Sequence[GroundTruthSequence],
    candidates: Sequence[PredictionSequence],
    weights: Optional[LossWeights] = None,
) -> np.ndarray:
    with no_grad():
        return np.array(
            [[matching_cost(gt, c, weights).item() for c in candidates] for gt in gts],
            dtype=np.float64,
        ).reshape(len(gts), len(candidates))


def select_positive(
    gt: GroundTruthSequence,
    candidates: Sequence[PredictionSequence],
    weights: Optional[LossWeights] = None,
) -> int:
    """Index of the lowest-cost candidate; ties go to the lowest index."""
    costs = cost_matrix([gt], candidates, weights)[0]
    return int(np.argmin(costs))


def training_loss(
    gt: GroundTruthSequence,
    candidates: Sequence[PredictionSequence],
    weights: Optional[LossWeights] = None,
) -> DiffTensor:
    """Full loss on the best-matching candidate, classification-only on the rest."""
    if not candidates:
        raise ShapeError("training_loss needs at least one candidate")
    return set_training_loss([gt], candidates, weights)


def set_training_loss(
    gts: Sequence[GroundTruthSequence],
    candidates: Sequence[PredictionSequence],
    weights: Optional[LossWeights] = None,
) -> DiffTensor:
    """Multi-object variant: positives chosen by Hungarian matching on the sequence cost."""
    if not candidates:
        raise ShapeError("set_training_loss needs at least one candidate")
    weights = weights or LossWeights()
    assignment = hungarian(cost_matrix(gts, candidates, weights))
    positives: List[int] = assignment.cols.tolist()
    logger.debug(f"positive candidates {positives} for {len(gts)} targets")

    total: DiffTensor = DiffTensor(0.0)
    for g, c in assignment.pairs():
        total = F.add(total, matching_cost(gts[g], candidates[c], weights))
    for index, candidate in enumerate(candidates):
        if index not in positives:
            total = F.add(total, negative_loss(candidate, weights))
    return total
