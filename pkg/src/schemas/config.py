"""Run configuration and loss weights."""

from pathlib import Path
from typing import Dict, Literal, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.exceptions import ConfigurationError

PATCH_STRIDE = 8
FPN_GROUPS = 8


class LossWeights(BaseModel):
    """Weights of the classification, box and mask loss terms."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    classification: float = Field(4.0, ge=0.0)
    l1: float = Field(5.0, ge=0.0)
    giou: float = Field(2.0, ge=0.0)
    dice: float = Field(5.0, ge=0.0)
    focal: float = Field(5.0, ge=0.0)
    proj: float = Field(5.0, ge=0.0)


class RunConfig(BaseModel):
    """Every knob of a training/evaluation run.

    Field names double as the keys of the flat ``key=value`` config file.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # model
    dim: int = Field(64, ge=8)
    heads: int = Field(4, ge=1)
    n_queries: int = Field(64, ge=1)
    decoder_layers: int = Field(4, ge=1)
    k: int = Field(2, ge=1)
    min_queries: int = Field(4, ge=1)
    pruning: Literal["confidence", "random", "none"] = "confidence"
    temporal_blocks: int = Field(3, ge=1)
    mask_blocks: int = Field(3, ge=0)
    alpha: float = Field(0.1, ge=0.0, le=1.0)
    num_points: int = Field(16, ge=1)
    use_deformable: bool = True
    use_mask_text_attention: bool = True
    use_tracker: bool = True
    use_temporal_decoder: bool = True

    # data
    frames: int = Field(6, ge=1)
    height: int = Field(64, ge=16)
    width: int = Field(64, ge=16)
    difficulty: int = Field(1, ge=0, le=3)
    train_scenes: int = Field(8, ge=1)

    # optimisation
    seed: int = 0
    learning_rate: float = Field(1e-3, ge=0.0)
    steps: int = Field(2000, ge=0)
    checkpoint_every: int = Field(200, ge=1)
    log_every: int = Field(10, ge=1)

    # loss weights
    lambda_cls: float = Field(4.0, ge=0.0)
    lambda_l1: float = Field(5.0, ge=0.0)
    lambda_giou: float = Field(2.0, ge=0.0)
    lambda_dice: float = Field(5.0, ge=0.0)
    lambda_focal: float = Field(5.0, ge=0.0)
    lambda_proj: float = Field(5.0, ge=0.0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "RunConfig":
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.dim % FPN_GROUPS:
            raise ValueError(f"dim={self.dim} must be divisible by {FPN_GROUPS}")
        if self.height % PATCH_STRIDE or self.width % PATCH_STRIDE:
            raise ValueError(
                f"frame size {self.height}x{self.width} must be divisible by {PATCH_STRIDE}"
            )
        positions = (self.height // PATCH_STRIDE) * (self.width // PATCH_STRIDE)
        if self.n_queries > positions:
            raise ValueError(
                f"n_queries={self.n_queries} exceeds the {positions} feature positions"
            )
        return self

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            classification=self.lambda_cls,
            l1=self.lambda_l1,
            giou=self.lambda_giou,
            dice=self.lambda_dice,
            focal=self.lambda_focal,
            proj=self.lambda_proj,
        )

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.model_fields))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**values)
        except ValidationError as exc:
            raise ConfigurationError(f"invalid run configuration: {exc}") from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a flat ``key=value`` file; blank values fall back to defaults."""
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        raw = dotenv_values(path)
        values = {key: value for key, value in raw.items() if value not in (None, "")}
        return cls.from_mapping(values)

    def with_overrides(self, **overrides: object) -> "RunConfig":
        return self.from_mapping({**self.model_dump(), **overrides})

    def to_lines(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"
