"""Attention primitives: multi-head (self and cross) and deformable cross-attention."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.core.exceptions import ConfigurationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor, as_tensor
from src.models.layers import Linear, Module

logger = logging.getLogger(__name__)

DEFAULT_HEADS = 4
DEFAULT_NUM_POINTS = 16


@dataclass
class AttentionOutput:
    """Attention result with the post-softmax weights kept for query scoring.

    ``weights`` has shape ``(..., heads, n, m)``; ``scores`` holds the scaled
    logits that produced them.
    """

    output: DiffTensor
    weights: DiffTensor
    scores: np.ndarray

    @property
    def mean_weights(self) -> np.ndarray:
        """Head-averaged weights, ``(..., n, m)``; rows sum to 1."""
        return self.weights.data.mean(axis=-3)

    @property
    def key_weights(self) -> np.ndarray:
        """Keys read as queries: softmax over the ``n`` queries of each key row.

        Returns the head-averaged ``(..., m, n)`` matrix whose row ``k`` is the
        distribution of key ``k``'s attention over the queries.
        """
        transposed = np.swapaxes(self.scores, -1, -2)
        shifted = transposed - transposed.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return (e / e.sum(axis=-1, keepdims=True)).mean(axis=-3)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` heads with an output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ConfigurationError(
                f"attention dim {dim} is not divisible by {heads} heads"
            )
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x: DiffTensor) -> DiffTensor:
        # (..., n, d) -> (..., heads, n, d/heads)
        lead = x.shape[:-2]
        n = x.shape[-2]
        split = F.reshape(x, lead + (n, self.heads, self.dim // self.heads))
        k = len(lead)
        axes = tuple(range(k)) + (k + 1, k, k + 2)
        return F.transpose(split, axes)

    def _merge(self, x: DiffTensor) -> DiffTensor:
        lead = x.shape[:-3]
        k = len(lead)
        axes = tuple(range(k)) + (k + 1, k, k + 2)
        merged = F.transpose(x, axes)
        return F.reshape(merged, lead + (x.shape[-2], self.dim))

    def __call__(self, query: DiffTensor, kv: DiffTensor) -> AttentionOutput:
        query, kv = as_tensor(query), as_tensor(kv)
        if query.shape[-1] != self.dim or kv.shape[-1] != self.dim:
            raise ShapeError.mismatch("attention", query.shape, kv.shape)
        if query.shape[:-2] != kv.shape[:-2]:
            raise ShapeError.mismatch("attention", query.shape, kv.shape)

        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(kv))
        v = self._split(self.v_proj(kv))
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        scores = F.scale(F.matmul(q, F.transpose(k, _swap_last(k.ndim))), scale)
        weights = F.softmax_rows(scores)
        context = self._merge(F.matmul(weights, v))
        return AttentionOutput(self.out_proj(context), weights, scores.data)

    def mhsa(self, x: DiffTensor) -> AttentionOutput:
        """Self-attention of the rows of ``x``."""
        return self(x, x)

    def cross_attention(self, query: DiffTensor, kv: DiffTensor) -> AttentionOutput:
        """Rows of ``query`` attend over the rows of ``kv``."""
        return self(query, kv)


def _swap_last(ndim: int):
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


# ---------------------------------------------------------------------
# Deformable cross-attention
# ---------------------------------------------------------------------


class DeformableParams(Module):
    """Offset and weight projectors of deformable cross-attention.

    Both projectors start at zero: every sample sits on the reference point
    and the sample weights are uniform.
    """

    def __init__(
        self,
        dim: int,
        rng: np.random.Generator,
        num_points: int = DEFAULT_NUM_POINTS,
    ):
        if num_points < 1:
            raise ConfigurationError(f"num_points must be >= 1, got {num_points}")
        self.num_points = num_points
        self.offset_projector = Linear(dim, num_points * 2, rng, zero_init=True)
        self.weight_projector = Linear(dim, num_points, rng, zero_init=True)


def deformable_cross_attention(
    query: DiffTensor,
    memory: DiffTensor,
    reference_point: DiffTensor,
    params: DeformableParams,
) -> DiffTensor:
    """Gather ``memory`` features around ``reference_point`` for each query.

    Args:
        query: ``d`` or ``n×d`` query embeddings
        memory: ``h×w×d`` feature map
        reference_point: ``2`` or ``n×2`` normalised ``(x, y)`` centres
        params: learned projectors

    Returns:
        Tensor shaped like ``query``; differentiable w.r.t. all three inputs.
    """
    query, memory, reference_point = (
        as_tensor(query),
        as_tensor(memory),
        as_tensor(reference_point),
    )
    single = query.ndim == 1
    if single:
        query = F.reshape(query, (1, -1))
        reference_point = F.reshape(reference_point, (1, 2))
    if memory.ndim != 3 or memory.shape[-1] != query.shape[-1]:
        raise ShapeError.mismatch("deformable_cross_attention", query.shape, memory.shape)
    if reference_point.shape != (query.shape[0], 2):
        raise ShapeError.mismatch(
            "deformable_cross_attention", query.shape, reference_point.shape
        )

    n, d = query.shape
    h, w, _ = memory.shape
    p = params.num_points
    reference = F.clamp(reference_point, 0.0, 1.0)

    offsets = F.scale(
        F.reshape(params.offset_projector(query), (n, p, 2)), 1.0 / max(h, w)
    )
    locations = F.add(F.reshape(reference, (n, 1, 2)), offsets)
    samples = F.reshape(
        F.bilinear_sample(memory, F.reshape(locations, (n * p, 2))), (n, p, d)
    )
    weights = F.reshape(F.softmax_rows(params.weight_projector(query)), (n, 1, p))
    out = F.reshape(F.matmul(weights, samples), (n, d))
    return F.reshape(out, (d,)) if single else out
