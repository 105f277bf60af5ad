"""Parameter containers and the small building blocks shared by all models."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.core.exceptions import ShapeError
from src.diffcore import functional as F
from src.diffcore.tensor import DiffTensor


class Module:
    """Base class exposing named parameters in a deterministic order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, DiffTensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, DiffTensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{index}.")

    def parameters(self) -> List[DiffTensor]:
        return [param for _, param in self.named_parameters()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing}, unexpected={unexpected}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError.mismatch(f"load_state_dict[{name}]", param.shape, value.shape)
            param.data[...] = value


class Linear(Module):
    """Affine map ``x @ weight + bias`` over the last axis."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        zero_init: bool = False,
        bias: bool = True,
    ):
        if zero_init:
            weight = np.zeros((in_features, out_features))
        else:
            limit = math.sqrt(6.0 / (in_features + out_features))
            weight = rng.uniform(-limit, limit, size=(in_features, out_features))
        self.weight = DiffTensor.parameter(weight)
        self.bias: Optional[DiffTensor] = (
            DiffTensor.parameter(np.zeros(out_features)) if bias else None
        )

    def __call__(self, x: DiffTensor) -> DiffTensor:
        out = F.matmul(x, self.weight) if x.ndim >= 2 else F.reshape(
            F.matmul(F.reshape(x, (1, -1)), self.weight), (-1,)
        )
        return out if self.bias is None else F.add(out, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = DiffTensor.parameter(np.ones(dim))
        self.bias = DiffTensor.parameter(np.zeros(dim))

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return F.layer_norm(x, self.gain, self.bias)


class GroupNorm(Module):
    """Group normalisation over the channel axis of an ``h×w×c`` map."""

    def __init__(self, channels: int, groups: int = 8):
        if channels % groups:
            raise ShapeError(f"GroupNorm: {channels} channels not divisible by {groups} groups")
        self.groups = groups
        self.gain = DiffTensor.parameter(np.ones(channels))
        self.bias = DiffTensor.parameter(np.zeros(channels))

    def __call__(self, x: DiffTensor) -> DiffTensor:
        h, w, c = x.shape
        per_group = c // self.groups
        grouped = F.transpose(F.reshape(x, (h * w, self.groups, per_group)), (1, 0, 2))
        normed = F.layer_norm(F.reshape(grouped, (self.groups, h * w * per_group)))
        restored = F.transpose(
            F.reshape(normed, (self.groups, h * w, per_group)), (1, 0, 2)
        )
        out = F.reshape(restored, (h, w, c))
        return F.add(F.mul(out, self.gain), self.bias)


class FeedForward(Module):
    """Two-layer GELU MLP with hidden width ``hidden``."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return self.fc2(F.gelu(self.fc1(x)))


class MLP(Module):
    """ReLU multi-layer perceptron."""

    def __init__(self, dims: List[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: DiffTensor) -> DiffTensor:
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = F.relu(x)
        return x
