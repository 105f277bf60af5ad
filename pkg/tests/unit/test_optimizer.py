"""Unit tests for the Adam optimiser."""

import numpy as np
import pytest

from src.diffcore.tensor import DiffTensor
from src.services.optimizer import Adam


def test_first_step_moves_by_learning_rate():
    param = DiffTensor.parameter(np.array([1.0, -2.0]))
    param.grad = np.array([0.5, -3.0])
    Adam([param], lr=0.1).step()
    # bias-corrected first step is lr * sign(g)
    assert param.data == pytest.approx([0.9, -1.9], abs=1e-7)


def test_zero_learning_rate_leaves_parameters():
    param = DiffTensor.parameter(np.array([0.3, 0.4]))
    param.grad = np.array([1.0, 1.0])
    before = param.data.copy()
    Adam([param], lr=0.0).step()
    assert param.data.tobytes() == before.tobytes()


def test_parameters_without_gradient_are_skipped():
    used = DiffTensor.parameter(np.zeros(2))
    unused = DiffTensor.parameter(np.ones(2))
    used.grad = np.ones(2)
    optimizer = Adam([used, unused], lr=0.01)
    optimizer.step()
    assert np.array_equal(unused.data, np.ones(2))
    assert not np.array_equal(used.data, np.zeros(2))


def test_minimises_a_quadratic():
    param = DiffTensor.parameter(np.array([3.0, -4.0]))
    optimizer = Adam([param], lr=0.1)
    for _ in range(500):
        param.grad = 2.0 * param.data
        optimizer.step()
    assert np.abs(param.data).max() < 0.05


def test_zero_grad_clears():
    param = DiffTensor.parameter(np.zeros(3))
    param.grad = np.ones(3)
    optimizer = Adam([param])
    optimizer.zero_grad()
    assert param.grad is None or not param.grad.any()
