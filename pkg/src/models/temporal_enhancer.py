"""Memory-augmented tracker and cross-modal temporal decoder.

The tracker aligns each frame's objects with a momentum memory bank using
Hungarian matching on cosine similarity; the memory is plain bookkeeping and
carries no gradient.  The temporal decoder then lets every object slot
attend along time and adds a sentence-conditioned context vector per frame.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from src.core.exceptions import ConfigurationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor, as_tensor
from src.models.attention import MultiHeadAttention
from src.models.layers import LayerNorm, Module
from src.services.matcher import hungarian

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
COSINE_EPS = 1e-12


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of rows; pairs involving a zero row give 0."""
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    a_unit = np.where(na > COSINE_EPS, a / np.where(na > COSINE_EPS, na, 1.0), 0.0)
    b_unit = np.where(nb > COSINE_EPS, b / np.where(nb > COSINE_EPS, nb, 1.0), 0.0)
    return a_unit @ b_unit.T


@dataclass
class ObjectMemory:
    m: DiffTensor
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"memory alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def initialise(cls, first_frame: DiffTensor, alpha: float = DEFAULT_ALPHA):
        """``M^1 = O^1`` (detached)."""
        return cls(DiffTensor(first_frame.data), alpha)

    @property
    def slots(self) -> int:
        return self.m.shape[0]


@dataclass
class AlignedSequence:
    embeddings: DiffTensor  # T × N_s × d
    permutations: List[np.ndarray] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return self.embeddings.shape[0]

    def frame(self, t: int) -> DiffTensor:
        return self.embeddings[t]


def align_objects(memory: ObjectMemory, o_t: DiffTensor) -> Tuple[DiffTensor, np.ndarray]:
    """Reorder ``o_t`` so row ``i`` is the object matched to memory slot ``i``.

    Returns:
        ``(aligned, permutation)`` with ``aligned[i] = o_t[permutation[i]]``
    """
    o_t = as_tensor(o_t)
    if o_t.shape != memory.m.shape:
        raise ShapeError.mismatch("align_objects", memory.m.shape, o_t.shape)
    cost = -cosine_matrix(memory.m.data, o_t.data)
    assignment = hungarian(cost)
    permutation = np.empty(memory.slots, dtype=np.int64)
    permutation[assignment.rows] = assignment.cols
    return F.take_rows(o_t, permutation), permutation


def update_memory(
    memory: ObjectMemory, aligned: DiffTensor, sentence: DiffTensor
) -> ObjectMemory:
    """Momentum update gated per slot by the clamped cosine to the sentence token."""
    aligned_data = as_tensor(aligned).data
    sentence_data = as_tensor(sentence).data.reshape(1, -1)
    relevance = np.clip(cosine_matrix(aligned_data, sentence_data)[:, 0], 0.0, 1.0)
    gate = (memory.alpha * relevance)[:, None]
    updated = (1.0 - gate) * memory.m.data + gate * aligned_data
    return ObjectMemory(DiffTensor(updated), memory.alpha)


class TemporalBlock(Module):
    """Temporal self-attention per slot, then sentence-query cross-attention.

    The cross-attention yields one context vector per frame, added to all
    ``N_s`` objects of that frame before the final layer norm.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.temporal_attention = MultiHeadAttention(dim, heads, rng)
        self.temporal_norm = LayerNorm(dim)
        self.sentence_attention = MultiHeadAttention(dim, heads, rng)
        self.enhance_norm = LayerNorm(dim)

    def __call__(self, sequence: AlignedSequence, sentences: DiffTensor) -> AlignedSequence:
        x = sequence.embeddings
        t, n, d = x.shape
        if sentences.shape != (t, d):
            raise ShapeError.mismatch("temporal_block", x.shape, sentences.shape)

        per_slot = F.transpose(x, (1, 0, 2))
        attended = self.temporal_attention.mhsa(per_slot).output
        per_slot = self.temporal_norm(F.add(per_slot, attended))
        x = F.transpose(per_slot, (1, 0, 2))

        objects = F.reshape(x, (t * n, d))
        context = self.sentence_attention.cross_attention(sentences, objects).output
        x = self.enhance_norm(F.add(x, F.reshape(context, (t, 1, d))))
        return AlignedSequence(x, sequence.permutations)


class TemporalEnhancer(Module):
    def __init__(
        self,
        dim: int,
        heads: int,
        blocks: int,
        rng: np.random.Generator,
        alpha: float = DEFAULT_ALPHA,
        use_tracker: bool = True,
        use_temporal_decoder: bool = True,
    ):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigurationError(f"memory alpha must lie in [0, 1], got {alpha}")
        self.alpha = alpha
        self.use_tracker = use_tracker
        self.use_temporal_decoder = use_temporal_decoder
        self.blocks = [TemporalBlock(dim, heads, rng) for _ in range(blocks)]

    def track(
        self, frames: Sequence[DiffTensor], sentences: Sequence[DiffTensor]
    ) -> Tuple[AlignedSequence, ObjectMemory]:
        """Sequential align-then-update pass over the frames."""
        if not frames:
            raise ConfigurationError("temporal enhancer needs at least one frame")
        slots = frames[0].shape[0]
        for o_t in frames:
            if o_t.shape[0] != slots:
                raise ShapeError.mismatch("enhance", frames[0].shape, o_t.shape)

        memory = ObjectMemory.initialise(frames[0], self.alpha)
        aligned: List[DiffTensor] = [frames[0]]
        permutations = [np.arange(slots, dtype=np.int64)]
        for t in range(1, len(frames)):
            if self.use_tracker:
                o_hat, perm = align_objects(memory, frames[t])
                memory = update_memory(memory, o_hat, sentences[t])
            else:
                o_hat, perm = frames[t], np.arange(slots, dtype=np.int64)
            aligned.append(o_hat)
            permutations.append(perm)
            logger.debug(f"frame {t}: alignment {perm.tolist()}")
        return AlignedSequence(F.stack(aligned), permutations), memory

    def enhance(
        self, frames: Sequence[DiffTensor], sentences: Sequence[DiffTensor]
    ) -> Tuple[AlignedSequence, ObjectMemory]:
        sequence, memory = self.track(frames, sentences)
        if not self.use_temporal_decoder:
            return sequence, memory
        sentence_rows = F.stack(list(sentences))
        for block in self.blocks:
            sequence = block(sequence, sentence_rows)
        return sequence, memory
