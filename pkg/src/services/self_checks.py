"""Named finite-difference self-checks, one group per model component."""

import logging
from typing import Callable, Dict

import numpy as np

from src.diffcore import functional as F
from src.diffcore.gradcheck import finite_diff_check, parameter_grad_check
from src.diffcore.tensor import DiffTensor
from src.models.attention import (
    DeformableParams,
    MultiHeadAttention,
    deformable_cross_attention,
)
from src.models.frontend import FrameFeatures, Frontend, TextFeatures
from src.models.mask_decoder import MaskDecoder, mask_generate
from src.models.query_decoder import ObjectQuerySet, QueryDecoderLayer
from src.models.temporal_enhancer import TemporalEnhancer
from src.services.losses import box_loss, dice_loss, focal_loss, mask_loss

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-5
# Gradients this small are compared absolutely.
ABSOLUTE_FLOOR = 1e-9

CheckGroup = Callable[[np.random.Generator], Dict[str, float]]


def _projection(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _check(f, x: np.ndarray) -> float:
    return finite_diff_check(f, DiffTensor(x), abs_tol=ABSOLUTE_FLOOR)


def check_diffcore(rng: np.random.Generator) -> Dict[str, float]:
    w = DiffTensor(rng.normal(size=(4, 5)))
    c = _projection(rng, (3, 5))
    other = DiffTensor(rng.normal(size=(3, 4)))
    fmap = rng.normal(size=(5, 6, 3))
    points = rng.uniform(0.05, 0.95, size=(4, 2))
    weights = _projection(rng, (4, 3))

    def composite(x: DiffTensor) -> DiffTensor:
        h = F.softmax_rows(F.matmul(x, w))
        return F.sum_(F.mul(F.layer_norm(F.gelu(h)), c))

    return {
        "softmax_layer_norm_gelu": _check(composite, rng.normal(size=(3, 4))),
        "bilinear_points": _check(
            lambda p: F.sum_(F.mul(F.bilinear_sample(fmap, p), weights)), points
        ),
        "bilinear_map": _check(
            lambda m: F.sum_(F.mul(F.bilinear_sample(m, points), weights)), fmap
        ),
        "cosine": _check(
            lambda a: F.sum_(F.cosine_similarity_rows(a, other)), rng.normal(size=(3, 4))
        ),
    }


def check_attention(rng: np.random.Generator) -> Dict[str, float]:
    d = 8
    attention = MultiHeadAttention(d, 2, rng)
    kv = DiffTensor(rng.normal(size=(4, d)))
    proj = _projection(rng, (3, d))
    params = DeformableParams(d, rng, num_points=4)
    # non-zero offsets so the sampling points spread out
    params.offset_projector.weight.data[...] = rng.normal(scale=0.2, size=(d, 8))
    memory = DiffTensor(rng.normal(size=(6, 6, d)))
    query = DiffTensor(rng.normal(size=d))
    out_proj = _projection(rng, d)

    def deformable(ref: DiffTensor) -> DiffTensor:
        sampled = deformable_cross_attention(query, memory, ref, params)
        return F.sum_(F.mul(sampled, out_proj))

    return {
        "mhsa": _check(
            lambda x: F.sum_(F.mul(attention.mhsa(x).output, proj)),
            rng.normal(size=(3, d)),
        ),
        "cross_attention": _check(
            lambda x: F.sum_(F.mul(attention.cross_attention(x, kv).output, proj)),
            rng.normal(size=(3, d)),
        ),
        "deformable_reference_point": _check(deformable, rng.uniform(0.2, 0.8, size=2)),
    }


def check_frontend(rng: np.random.Generator) -> Dict[str, float]:
    frontend = Frontend(16, 4, rng)
    proj = _projection(rng, (2, 2, 16))
    return {
        "encode_frame": _check(
            lambda x: F.sum_(F.mul(frontend.encode_frame(x).coarse, proj)),
            rng.uniform(0.0, 1.0, size=(16, 16, 3)),
        )
    }


def check_query_decoder(rng: np.random.Generator) -> Dict[str, float]:
    d = 16
    layer = QueryDecoderLayer(d, 4, rng)
    frame = FrameFeatures(
        f_img=DiffTensor(rng.normal(size=(2, 2, d))),
        f_seg=DiffTensor(rng.normal(size=(4, 4, d))),
    )
    text = TextFeatures(DiffTensor(rng.normal(size=(3, d))))
    proj = _projection(rng, (3, d))

    def decode(x: DiffTensor) -> DiffTensor:
        queries = ObjectQuerySet(x, np.zeros(3), np.arange(3))
        out, _, _ = layer(queries, frame, text)
        return F.sum_(F.mul(out.embeddings, proj))

    return {"decoder_layer": _check(decode, rng.normal(size=(3, d)))}


def check_mask_decoder(rng: np.random.Generator) -> Dict[str, float]:
    d = 16
    decoder = MaskDecoder(d, 4, 1, rng, num_points=4)
    f_seg = DiffTensor(rng.normal(size=(6, 6, d)))
    text = TextFeatures(DiffTensor(rng.normal(size=(3, d))))
    o = DiffTensor(rng.normal(size=d))
    gt = (rng.uniform(size=(6, 6)) > 0.5).astype(np.float64)
    box_weights = _projection(rng, 4)

    def mask_dice() -> DiffTensor:
        _, logits = decoder(o, f_seg, text)
        return dice_loss(F.sigmoid(logits), gt)

    return {
        "box_head": _check(
            lambda x: F.sum_(F.mul(decoder.box_head(x).values, box_weights)),
            rng.normal(size=d),
        ),
        # mask loss must reach the box head through the sampling locations
        "mask_to_box_head": parameter_grad_check(
            mask_dice,
            decoder.box_head.mlp.layers[0].weight,
            abs_tol=ABSOLUTE_FLOOR,
            max_elements=12,
            rng=rng,
        ),
        "mask_generate": _check(
            lambda x: F.sum_(F.mul(mask_generate(x, f_seg), gt)), rng.normal(size=d)
        ),
    }


def check_temporal_enhancer(rng: np.random.Generator) -> Dict[str, float]:
    d = 8
    enhancer = TemporalEnhancer(d, 2, 1, rng)
    second = DiffTensor(rng.normal(size=(2, d)))
    sentences = [DiffTensor(rng.normal(size=d)), DiffTensor(rng.normal(size=d))]
    proj = _projection(rng, (2, 2, d))

    def enhance(first: DiffTensor) -> DiffTensor:
        sequence, _ = enhancer.enhance([first, second], sentences)
        return F.sum_(F.mul(sequence.embeddings, proj))

    return {"two_frames": _check(enhance, rng.normal(size=(2, d)))}


def check_matching_losses(rng: np.random.Generator) -> Dict[str, float]:
    gt_box = np.array([0.5, 0.45, 0.3, 0.4])
    gt_mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    return {
        "focal": _check(
            lambda p: focal_loss(p, np.array([1.0, 0.0, 1.0])), rng.uniform(0.1, 0.9, size=3)
        ),
        "box": _check(lambda b: box_loss(b, gt_box), np.array([0.45, 0.5, 0.25, 0.35])),
        "mask": _check(lambda m: mask_loss(m, gt_mask, gt_box), rng.normal(size=(8, 8))),
    }


REGISTRY: Dict[str, CheckGroup] = {
    "diffcore": check_diffcore,
    "attention": check_attention,
    "frontend": check_frontend,
    "query_decoder": check_query_decoder,
    "mask_decoder": check_mask_decoder,
    "temporal_enhancer": check_temporal_enhancer,
    "matching_losses": check_matching_losses,
}


def run_checks(module: str = "all", seed: int = 0) -> Dict[str, float]:
    """Run one group (or all) and return ``{"group.check": max relative error}``."""
    if module != "all" and module not in REGISTRY:
        raise KeyError(f"unknown gradcheck module {module!r}; choose from {sorted(REGISTRY)}")
    names = list(REGISTRY) if module == "all" else [module]
    results: Dict[str, float] = {}
    for name in names:
        rng = np.random.default_rng(seed)
        for check, error in REGISTRY[name](rng).items():
            results[f"{name}.{check}"] = error
            logger.debug(f"{name}.{check}: {error:.3e}")
    return results
