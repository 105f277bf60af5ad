"""Frame and text encoders, the bidirectional fusion block, and the FPN head.

These are small stand-ins for the pretrained backbones of a grounding
detector: two strided patch-merge stages give ``F_img`` at ``H/8``, a token
table plus one self-attention block gives the text features, one block of
image↔text cross-attention fuses them, and a two-stage FPN lifts the fused
map to ``F_seg`` at ``H/4``.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.core.exceptions import ConfigurationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor, as_tensor
from src.models.attention import MultiHeadAttention
from src.models.layers import GroupNorm, LayerNorm, Linear, Module
from src.models.vocabulary import CLS_ID, VOCAB_SIZE

logger = logging.getLogger(__name__)

PATCH = 4
MERGE = 2
STRIDE = PATCH * MERGE
MAX_PROGRAM_LENGTH = 16
FPN_GROUPS = 8


@dataclass
class TextFeatures:
    """``tokens[0]`` is the sentence ([CLS]) token; the rest are content tokens."""

    tokens: DiffTensor

    @property
    def cls(self) -> DiffTensor:
        return self.tokens[0]

    @property
    def content(self) -> DiffTensor:
        return self.tokens[1:]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass
class RawFrameFeatures:
    coarse: DiffTensor  # H/8 × W/8 × d
    fine: DiffTensor  # H/4 × W/4 × d


@dataclass
class FrameFeatures:
    f_img: DiffTensor  # H/8 × W/8 × d
    f_seg: DiffTensor  # H/4 × W/4 × d

    @property
    def grid(self):
        return self.f_img.shape[:2]

    def flat_image(self) -> DiffTensor:
        h, w, d = self.f_img.shape
        return F.reshape(self.f_img, (h * w, d))


def conv3x3_indices(h: int, w: int) -> np.ndarray:
    """Row indices of each 3×3 neighbourhood into a flattened map.

    Out-of-map neighbours point at row ``h*w``, the zero padding row.
    """
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    index = np.full((h, w, 9), h * w, dtype=np.int64)
    for k, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
        ny, nx = ys + dy, xs + dx
        valid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        index[..., k] = np.where(valid, ny * w + nx, h * w)
    return index.reshape(-1)


def nearest_upsample_indices(h: int, w: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(2 * h), np.arange(2 * w), indexing="ij")
    return ((ys // 2) * w + xs // 2).reshape(-1)


def space_to_depth(x: DiffTensor, block: int) -> DiffTensor:
    """``h×w×c`` → ``(h/b)×(w/b)×(b·b·c)`` by merging non-overlapping blocks."""
    h, w, c = x.shape
    blocks = F.reshape(x, (h // block, block, w // block, block, c))
    blocks = F.transpose(blocks, (0, 2, 1, 3, 4))
    return F.reshape(blocks, (h // block, w // block, block * block * c))


class Conv3x3(Module):
    """Same-padding 3×3 convolution as a gather followed by a linear map."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.kernel = Linear(9 * dim, dim, rng)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        h, w, d = x.shape
        flat = F.reshape(x, (h * w, d))
        padded = F.concat([flat, DiffTensor(np.zeros((1, d)))], axis=0)
        patches = F.reshape(F.take_rows(padded, conv3x3_indices(h, w)), (h * w, 9 * d))
        return F.reshape(self.kernel(patches), (h, w, self.dim))


class Frontend(Module):
    """Image encoder, text encoder, fusion block and FPN sharing one width ``d``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % FPN_GROUPS:
            raise ConfigurationError(
                f"feature dim {dim} must be divisible by {FPN_GROUPS} FPN groups"
            )
        self.dim = dim
        # image
        self.patch_embed = Linear(PATCH * PATCH * 3, dim, rng)
        self.patch_merge = Linear(MERGE * MERGE * dim, dim, rng)
        # text
        scale = 1.0 / np.sqrt(dim)
        self.token_embedding = DiffTensor.parameter(
            rng.normal(0.0, 1.0, size=(VOCAB_SIZE, dim)) * scale
        )
        self.position_embedding = DiffTensor.parameter(
            rng.normal(0.0, 1.0, size=(MAX_PROGRAM_LENGTH + 1, dim)) * scale
        )
        self.text_attention = MultiHeadAttention(dim, heads, rng)
        self.text_norm = LayerNorm(dim)
        # fusion
        self.image_to_text = MultiHeadAttention(dim, heads, rng)
        self.image_fuse_norm = LayerNorm(dim)
        self.text_to_image = MultiHeadAttention(dim, heads, rng)
        self.text_fuse_norm = LayerNorm(dim)
        # FPN
        self.fpn_conv_coarse = Conv3x3(dim, rng)
        self.fpn_norm_coarse = GroupNorm(dim, FPN_GROUPS)
        self.fpn_lateral = Linear(dim, dim, rng)
        self.fpn_conv_fine = Conv3x3(dim, rng)
        self.fpn_norm_fine = GroupNorm(dim, FPN_GROUPS)

    # -----------------------------------------------------------------
    # Encoders
    # -----------------------------------------------------------------

    def encode_frame(self, frame) -> RawFrameFeatures:
        """Two patch-merge stages: stride 4 to ``fine``, then stride 8 to ``coarse``."""
        frame = as_tensor(frame)
        if frame.ndim != 3 or frame.shape[-1] != 3:
            raise ShapeError(f"encode_frame expects an H×W×3 frame, got {frame.shape}")
        height, width, _ = frame.shape
        if height % STRIDE or width % STRIDE:
            raise ConfigurationError(
                f"frame extents {height}×{width} must be divisible by {STRIDE}"
            )
        fine = F.gelu(self.patch_embed(space_to_depth(frame, PATCH)))
        coarse = F.gelu(self.patch_merge(space_to_depth(fine, MERGE)))
        return RawFrameFeatures(coarse=coarse, fine=fine)

    def encode_text(self, program: Sequence[int]) -> TextFeatures:
        """Embed ``[CLS] + program`` and run one self-attention block."""
        ids = [CLS_ID, *[int(i) for i in program]]
        if len(ids) < 2:
            raise ConfigurationError("text program needs at least one content token")
        if len(ids) > MAX_PROGRAM_LENGTH + 1:
            raise ConfigurationError(
                f"text program longer than {MAX_PROGRAM_LENGTH} tokens"
            )
        if any(i < 0 or i >= VOCAB_SIZE for i in ids):
            raise ConfigurationError(f"token id outside vocabulary: {program}")
        embedded = F.add(
            F.take_rows(self.token_embedding, ids),
            F.take_rows(self.position_embedding, list(range(len(ids)))),
        )
        attended = self.text_attention.mhsa(embedded)
        return TextFeatures(self.text_norm(F.add(embedded, attended.output)))

    # -----------------------------------------------------------------
    # Fusion + FPN
    # -----------------------------------------------------------------

    def fuse(self, raw: RawFrameFeatures, text: TextFeatures):
        """Bidirectional image/text fusion followed by the FPN head.

        Returns:
            ``(FrameFeatures, TextFeatures)`` for this frame; the sentence
            token of the returned text features is frame-specific.
        """
        h, w, d = raw.coarse.shape
        image = F.reshape(raw.coarse, (h * w, d))
        image_ctx = self.image_to_text.cross_attention(image, text.tokens)
        text_ctx = self.text_to_image.cross_attention(text.tokens, image)
        fused_image = self.image_fuse_norm(F.add(image, image_ctx.output))
        fused_text = self.text_fuse_norm(F.add(text.tokens, text_ctx.output))

        f_img = F.reshape(fused_image, (h, w, d))
        coarse = F.relu(self.fpn_norm_coarse(self.fpn_conv_coarse(f_img)))
        upsampled = F.take_rows(
            F.reshape(coarse, (h * w, d)), nearest_upsample_indices(h, w)
        )
        fh, fw, _ = raw.fine.shape
        lateral = self.fpn_lateral(F.reshape(raw.fine, (fh * fw, d)))
        merged = F.reshape(F.add(upsampled, lateral), (fh, fw, d))
        f_seg = F.relu(self.fpn_norm_fine(self.fpn_conv_fine(merged)))
        return FrameFeatures(f_img=f_img, f_seg=f_seg), TextFeatures(fused_text)

    def __call__(self, frame, text: TextFeatures):
        return self.fuse(self.encode_frame(frame), text)
