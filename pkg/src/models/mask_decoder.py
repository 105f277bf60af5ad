"""Box head and the grounding → deformation → segmentation mask decoder."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.core.exceptions import ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor, as_tensor
from src.models.attention import (
    DEFAULT_NUM_POINTS,
    DeformableParams,
    MultiHeadAttention,
    deformable_cross_attention,
)
from src.models.frontend import TextFeatures
from src.models.layers import MLP, FeedForward, LayerNorm, Module

logger = logging.getLogger(__name__)

FFN_EXPANSION = 4


@dataclass
class BoxPrediction:
    """Normalised ``(cx, cy, w, h)`` in ``(0, 1)``; shape ``4`` or ``N×4``."""

    values: DiffTensor

    @property
    def center(self) -> DiffTensor:
        return self.values[..., :2]

    @property
    def cx(self) -> float:
        return float(self.values.data[..., 0])

    @property
    def cy(self) -> float:
        return float(self.values.data[..., 1])

    @property
    def w(self) -> float:
        return float(self.values.data[..., 2])

    @property
    def h(self) -> float:
        return float(self.values.data[..., 3])


class BoxHead(Module):
    """3-layer ReLU MLP to four logits, squashed by a sigmoid."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([dim, dim, dim, 4], rng)

    def __call__(self, o: DiffTensor) -> BoxPrediction:
        return BoxPrediction(F.sigmoid(self.mlp(o)))


class MaskDecoderBlock(Module):
    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        num_points: int = DEFAULT_NUM_POINTS,
    ):
        self.deformable = DeformableParams(dim, rng, num_points)
        self.deformable_norm = LayerNorm(dim)
        self.text_attention = MultiHeadAttention(dim, heads, rng)
        self.text_norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, FFN_EXPANSION * dim, rng)
        self.ffn_norm = LayerNorm(dim)

    def __call__(
        self,
        o: DiffTensor,
        reference: DiffTensor,
        f_seg: DiffTensor,
        text: TextFeatures,
        use_deformable: bool = True,
        use_text_attention: bool = True,
    ) -> DiffTensor:
        if use_deformable:
            sampled = deformable_cross_attention(o, f_seg, reference, self.deformable)
            o = self.deformable_norm(F.add(o, sampled))
        if use_text_attention:
            single = o.ndim == 1
            rows = F.reshape(o, (1, -1)) if single else o
            attended = self.text_attention.cross_attention(rows, text.tokens).output
            if single:
                attended = F.reshape(attended, (-1,))
            o = self.text_norm(F.add(o, attended))
        return self.ffn_norm(F.add(o, self.ffn(o)))


class MaskDecoder(Module):
    """Predict a box once, then refine the object embedding around its centre.

    The same differentiable centre is the reference point of every block, so
    mask losses reach the box head through the sampling locations.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        blocks: int,
        rng: np.random.Generator,
        num_points: int = DEFAULT_NUM_POINTS,
        use_deformable: bool = True,
        use_mask_text_attention: bool = True,
    ):
        self.dim = dim
        self.box_head = BoxHead(dim, rng)
        self.blocks = [
            MaskDecoderBlock(dim, heads, rng, num_points) for _ in range(blocks)
        ]
        self.use_deformable = use_deformable
        self.use_mask_text_attention = use_mask_text_attention

    def mask_decode(
        self,
        o: DiffTensor,
        box: BoxPrediction,
        f_seg: DiffTensor,
        text: TextFeatures,
    ) -> DiffTensor:
        """Mask embedding ``o_m``; with no blocks ``o`` is returned unchanged."""
        reference = box.center
        for block in self.blocks:
            o = block(
                o,
                reference,
                f_seg,
                text,
                use_deformable=self.use_deformable,
                use_text_attention=self.use_mask_text_attention,
            )
        return o

    def __call__(self, o: DiffTensor, f_seg: DiffTensor, text: TextFeatures):
        box = self.box_head(o)
        o_m = self.mask_decode(o, box, f_seg, text)
        return box, mask_generate(o_m, f_seg)


def mask_generate(o_m: DiffTensor, f_seg: DiffTensor) -> DiffTensor:
    """``logits[y, x] = ⟨o_m, f_seg[y, x]⟩ / √d``; ``N×d`` embeddings give ``N×h×w``."""
    o_m, f_seg = as_tensor(o_m), as_tensor(f_seg)
    h, w, d = f_seg.shape
    if o_m.shape[-1] != d:
        raise ShapeError.mismatch("mask_generate", o_m.shape, f_seg.shape)
    pixels = F.reshape(f_seg, (h * w, d))
    if o_m.ndim == 1:
        logits = F.matmul(pixels, F.reshape(o_m, (d, 1)))
        return F.scale(F.reshape(logits, (h, w)), 1.0 / math.sqrt(d))
    n = o_m.shape[0]
    logits = F.matmul(o_m, F.transpose(pixels))
    return F.scale(F.reshape(logits, (n, h, w)), 1.0 / math.sqrt(d))
