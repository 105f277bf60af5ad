"""Cross-modal query decoder with confidence-aware query pruning.

Each decoder layer runs self-attention, image cross-attention and text
cross-attention (residual + layer norm each) followed by a feed-forward
sublayer.  After every layer the queries are scored from the attention
weights the layer already computed, and only ``ceil(N/k)`` of them are kept.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import IO, List, Optional, Tuple

import numpy as np

from src.core.exceptions import ConfigurationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor
from src.models.attention import MultiHeadAttention
from src.models.frontend import FrameFeatures, TextFeatures
from src.models.layers import FeedForward, LayerNorm, Module

logger = logging.getLogger(__name__)

PRUNING_STRATEGIES = ("confidence", "random", "none")
FFN_EXPANSION = 4


@dataclass
class ObjectQuerySet:
    embeddings: DiffTensor
    confidence: np.ndarray
    origin_ids: np.ndarray

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def select(self, rows: np.ndarray, confidence: Optional[np.ndarray] = None):
        rows = np.asarray(rows, dtype=np.int64)
        return ObjectQuerySet(
            embeddings=F.take_rows(self.embeddings, rows),
            confidence=(self.confidence if confidence is None else confidence)[rows],
            origin_ids=self.origin_ids[rows],
        )


# ---------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    layer: int
    n_queries: int
    attn_macs: int
    ffn_macs: int
    text_macs: int = 0


@dataclass
class CostLedger:
    """Multiply-accumulate counts per decoder layer.

    Attention costs ``N²d`` and projections/feed-forward ``Nd²``; the text
    cross-attention term ``NKd`` is kept apart and excluded from ``total``.
    """

    dim: int
    entries: List[LedgerEntry] = field(default_factory=list)

    def record(self, n_queries: int, text_tokens: int = 0) -> LedgerEntry:
        n, d = int(n_queries), self.dim
        entry = LedgerEntry(
            layer=len(self.entries),
            n_queries=n,
            attn_macs=n * n * d,
            ffn_macs=n * d * d,
            text_macs=n * int(text_tokens) * d,
        )
        self.entries.append(entry)
        return entry

    @property
    def total(self) -> int:
        return sum(e.attn_macs + e.ffn_macs for e in self.entries)

    @property
    def text_total(self) -> int:
        return sum(e.text_macs for e in self.entries)

    @property
    def chain(self) -> List[int]:
        return [e.n_queries for e in self.entries]

    @classmethod
    def plan(
        cls,
        n_queries: int,
        layers: int,
        dim: int,
        k: int,
        min_keep: int = 1,
        text_tokens: int = 0,
    ) -> "CostLedger":
        """Ledger of a decode without tensors, following the same retention rule."""
        ledger = cls(dim)
        n = n_queries
        for _ in range(layers):
            ledger.record(n, text_tokens)
            n = retained_count(n, k, min_keep)
        return ledger

    def write_csv(self, stream: IO[str]) -> None:
        writer = csv.writer(stream)
        writer.writerow(["layer", "n_queries", "attn_macs", "ffn_macs"])
        for e in self.entries:
            writer.writerow([e.layer, e.n_queries, e.attn_macs, e.ffn_macs])


def closed_form_total(n_queries: int, dim: int, k: int) -> float:
    """Depth-independent bound ``k²/(k²−1)·N²d + k/(k−1)·Nd²`` for ``k ≥ 2``."""
    if k < 2:
        raise ConfigurationError(f"closed form needs k >= 2, got {k}")
    n, d = float(n_queries), float(dim)
    return (k * k / (k * k - 1.0)) * n * n * d + (k / (k - 1.0)) * n * d * d


def unpruned_total(n_queries: int, layers: int, dim: int) -> int:
    return layers * (n_queries * n_queries * dim + n_queries * dim * dim)


def retained_count(n: int, k: int, min_keep: int = 1) -> int:
    if k < 1:
        raise ConfigurationError(f"retention divisor k must be >= 1, got {k}")
    return min(n, max(math.ceil(n / k), min_keep))


# ---------------------------------------------------------------------
# Query initialisation, scoring and pruning
# ---------------------------------------------------------------------


def init_queries(n_q: int, frame: FrameFeatures, text: TextFeatures) -> ObjectQuerySet:
    """Pick the ``n_q`` image positions most similar to any content token.

    Ties are broken by ascending position index.
    """
    h, w = frame.grid
    if n_q < 1 or n_q > h * w:
        raise ConfigurationError(f"n_q={n_q} outside [1, {h * w}] for a {h}×{w} map")
    image = frame.flat_image()
    d = image.shape[1]
    similarity = (image.data @ text.content.data.T).max(axis=1) / math.sqrt(d)
    positions = np.lexsort((np.arange(h * w), -similarity))[:n_q]
    return ObjectQuerySet(
        embeddings=F.take_rows(image, positions),
        confidence=similarity[positions].copy(),
        origin_ids=np.arange(n_q, dtype=np.int64),
    )


def confidence_scores(attn_self: np.ndarray, attn_cross: np.ndarray) -> np.ndarray:
    """Score each query by attention received from other queries plus its best text affinity.

    Args:
        attn_self: ``N×N`` head-averaged self-attention weights
        attn_cross: ``K×N`` text-to-query weights

    Returns:
        ``N`` scores; the self-attention term is 0 when ``N == 1``.
    """
    attn_self = np.asarray(attn_self, dtype=np.float64)
    attn_cross = np.asarray(attn_cross, dtype=np.float64)
    n = attn_self.shape[0]
    if attn_self.shape != (n, n) or attn_cross.shape[1] != n:
        raise ShapeError.mismatch("confidence_scores", attn_self.shape, attn_cross.shape)
    if n > 1:
        received = (attn_self.sum(axis=0) - np.diag(attn_self)) / (n - 1)
    else:
        received = np.zeros(1)
    return received + attn_cross.max(axis=0)


def prune(
    q: ObjectQuerySet,
    scores: np.ndarray,
    k: int,
    min_keep: int = 1,
    strategy: str = "confidence",
    rng: Optional[np.random.Generator] = None,
) -> ObjectQuerySet:
    """Keep ``max(ceil(N/k), min_keep)`` queries.

    ``confidence`` keeps the highest scores (ties: smaller origin id first),
    ``random`` keeps as many chosen by ``rng``, ``none`` keeps everything.
    Retained queries stay in their incoming order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(q)
    if strategy not in PRUNING_STRATEGIES:
        raise ConfigurationError(f"unknown pruning strategy {strategy!r}")
    if strategy == "none":
        return q.select(np.arange(n), scores)
    keep = retained_count(n, k, min_keep)
    if strategy == "random":
        if rng is None:
            raise ConfigurationError("random pruning needs a generator")
        rows = np.sort(rng.choice(n, size=keep, replace=False))
    else:
        order = np.lexsort((q.origin_ids, -scores))
        rows = np.sort(order[:keep])
    return q.select(rows, scores)


# ---------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------


class QueryDecoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.self_attention = MultiHeadAttention(dim, heads, rng)
        self.self_norm = LayerNorm(dim)
        self.image_attention = MultiHeadAttention(dim, heads, rng)
        self.image_norm = LayerNorm(dim)
        self.text_attention = MultiHeadAttention(dim, heads, rng)
        self.text_norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, FFN_EXPANSION * dim, rng)
        self.ffn_norm = LayerNorm(dim)

    def __call__(
        self, q: ObjectQuerySet, frame: FrameFeatures, text: TextFeatures
    ) -> Tuple[ObjectQuerySet, np.ndarray, np.ndarray]:
        """Returns the refined queries, ``A_s`` (N×N) and ``A_c`` (K×N)."""
        x = q.embeddings
        sa = self.self_attention.mhsa(x)
        x = self.self_norm(F.add(x, sa.output))
        ia = self.image_attention.cross_attention(x, frame.flat_image())
        x = self.image_norm(F.add(x, ia.output))
        ta = self.text_attention.cross_attention(x, text.tokens)
        x = self.text_norm(F.add(x, ta.output))
        x = self.ffn_norm(F.add(x, self.ffn(x)))
        out = ObjectQuerySet(x, q.confidence, q.origin_ids)
        return out, sa.mean_weights, ta.key_weights


class QueryDecoder(Module):
    """``layers`` decoder layers, each followed by a pruning round."""

    def __init__(
        self,
        dim: int,
        heads: int,
        layers: int,
        rng: np.random.Generator,
        k: int = 2,
        min_keep: int = 4,
        strategy: str = "confidence",
    ):
        if strategy not in PRUNING_STRATEGIES:
            raise ConfigurationError(f"unknown pruning strategy {strategy!r}")
        self.dim = dim
        self.k = k
        self.min_keep = min_keep
        self.strategy = strategy
        self.layers = [QueryDecoderLayer(dim, heads, rng) for _ in range(layers)]

    def decode_frame(
        self,
        frame: FrameFeatures,
        text: TextFeatures,
        n_q: int,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[ObjectQuerySet, CostLedger]:
        q = init_queries(n_q, frame, text)
        ledger = CostLedger(self.dim)
        for index, layer in enumerate(self.layers):
            ledger.record(len(q), text.num_tokens)
            q, attn_self, attn_cross = layer(q, frame, text)
            scores = confidence_scores(attn_self, attn_cross)
            q = prune(q, scores, self.k, self.min_keep, self.strategy, rng)
            logger.debug(f"decoder layer {index}: kept {len(q)} queries")
        return q, ledger


def classification_score(o: DiffTensor, text: TextFeatures) -> DiffTensor:
    """``sigmoid(max_k ⟨o, t_k⟩/√d)`` over content tokens; accepts ``d`` or ``N×d``."""
    d = o.shape[-1]
    single = o.ndim == 1
    rows = F.reshape(o, (1, d)) if single else o
    similarity = F.scale(F.matmul(rows, F.transpose(text.content)), 1.0 / math.sqrt(d))
    score = F.sigmoid(F.max_(similarity, axis=-1))
    return F.reshape(score, ()) if single else score
