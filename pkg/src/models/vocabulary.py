"""Token alphabet of the synthetic-scene text programs."""

from typing import Dict, List, Sequence

CLS_TOKEN = "[CLS]"
PAD_TOKEN = "[PAD]"

COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan", "white", "orange")
SHAPES = ("circle", "square", "triangle")
MOTIONS = (
    "static",
    "moving-left",
    "moving-right",
    "moving-up",
    "moving-down",
    "orbiting",
    "shrinking",
)
QUANTIFIERS = ("all", "the", "object", "objects")

TOKENS: List[str] = [CLS_TOKEN, PAD_TOKEN, *COLORS, *SHAPES, *MOTIONS, *QUANTIFIERS]
TOKEN_IDS: Dict[str, int] = {token: index for index, token in enumerate(TOKENS)}

CLS_ID = TOKEN_IDS[CLS_TOKEN]
PAD_ID = TOKEN_IDS[PAD_TOKEN]
VOCAB_SIZE = len(TOKENS)


def encode_program(words: Sequence[str]) -> List[int]:
    """Map program words to ids; unknown words raise ``KeyError``."""
    return [TOKEN_IDS[word] for word in words]


def decode_program(ids: Sequence[int]) -> List[str]:
    return [TOKENS[i] for i in ids]
