"""The assembled referring-video segmentation model."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.core.exceptions import ConfigurationError
from src.core.metrics import record_queries_retained
from src.diffcore import functional as F
from src.models.frontend import Frontend, TextFeatures
from src.models.layers import Module
from src.models.mask_decoder import MaskDecoder
from src.models.query_decoder import (
    PRUNING_STRATEGIES,
    CostLedger,
    QueryDecoder,
    classification_score,
)
from src.models.temporal_enhancer import AlignedSequence, TemporalEnhancer
from src.schemas.config import RunConfig
from src.services.losses import PredictionSequence

logger = logging.getLogger(__name__)


@dataclass
class VideoOutput:
    candidates: List[PredictionSequence]
    ledgers: List[CostLedger]
    sequence: AlignedSequence
    texts: List[TextFeatures]

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)


class ReferDino(Module):
    """Frontend → pruned query decoder → temporal enhancer → box/mask heads.

    Every frame yields ``N_s`` object queries; after temporal alignment slot
    ``i`` of every frame forms candidate trajectory ``i``.
    """

    def __init__(self, config: RunConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.frontend = Frontend(config.dim, config.heads, rng)
        self.query_decoder = QueryDecoder(
            config.dim,
            config.heads,
            config.decoder_layers,
            rng,
            k=config.k,
            min_keep=config.min_queries,
            strategy=config.pruning,
        )
        self.temporal_enhancer = TemporalEnhancer(
            config.dim,
            config.heads,
            config.temporal_blocks,
            rng,
            alpha=config.alpha,
            use_tracker=config.use_tracker,
            use_temporal_decoder=config.use_temporal_decoder,
        )
        self.mask_decoder = MaskDecoder(
            config.dim,
            config.heads,
            config.mask_blocks,
            rng,
            num_points=config.num_points,
            use_deformable=config.use_deformable,
            use_mask_text_attention=config.use_mask_text_attention,
        )

    def set_pruning(self, strategy: str, k: Optional[int] = None) -> None:
        """Switch the pruning strategy (and divisor) without touching parameters."""
        if strategy not in PRUNING_STRATEGIES:
            raise ConfigurationError(f"unknown pruning strategy {strategy!r}")
        self.query_decoder.strategy = strategy
        if k is not None:
            self.query_decoder.k = k

    def __call__(
        self,
        frames: np.ndarray,
        program: Sequence[int],
        rng: Optional[np.random.Generator] = None,
    ) -> VideoOutput:
        """Run the model on a ``T×H×W×3`` clip referred to by ``program``."""
        if rng is None:
            rng = np.random.default_rng(self.config.seed + 1)
        text = self.frontend.encode_text(program)

        objects, sentences, texts, seg_maps, ledgers = [], [], [], [], []
        for frame in frames:
            features, frame_text = self.frontend(frame, text)
            queries, ledger = self.query_decoder.decode_frame(
                features, frame_text, self.config.n_queries, rng
            )
            objects.append(queries.embeddings)
            sentences.append(frame_text.cls)
            texts.append(frame_text)
            seg_maps.append(features.f_seg)
            ledgers.append(ledger)
        record_queries_retained(objects[0].shape[0])

        sequence, _ = self.temporal_enhancer.enhance(objects, sentences)

        scores, boxes, masks = [], [], []
        for t in range(len(frames)):
            o = sequence.frame(t)
            scores.append(classification_score(o, texts[t]))
            box, logits = self.mask_decoder(o, seg_maps[t], texts[t])
            boxes.append(box.values)
            masks.append(logits)
        scores_t, boxes_t, masks_t = F.stack(scores), F.stack(boxes), F.stack(masks)

        candidates = [
            PredictionSequence(
                scores=scores_t[:, i], boxes=boxes_t[:, i], masks=masks_t[:, i]
            )
            for i in range(scores_t.shape[1])
        ]
        return VideoOutput(candidates, ledgers, sequence, texts)

