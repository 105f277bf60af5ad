"""Adaptive-moment gradient descent over model parameters."""

import logging
from typing import List, Sequence

import numpy as np

from src.diffcore.tensor import DiffTensor

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class Adam:
    """Adam without weight decay; parameters without a gradient are skipped."""

    def __init__(
        self,
        parameters: Sequence[DiffTensor],
        lr: float = 1e-3,
        beta1: float = BETA1,
        beta2: float = BETA2,
        eps: float = EPSILON,
    ):
        self.parameters: List[DiffTensor] = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

        # Moment estimates
        self.m = [np.zeros_like(p.data) for p in self.parameters]
        self.v = [np.zeros_like(p.data) for p in self.parameters]

    def step(self) -> None:
        """Apply one update from the gradients currently stored on the parameters."""
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, param in enumerate(self.parameters):
            if param.grad is None:
                continue
            g = param.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for param in self.parameters:
            param.zero_grad()
