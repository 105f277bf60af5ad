"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from src.diffcore.tensor import DiffTensor, Tape, backward, no_grad

logger = logging.getLogger(__name__)

ScalarFn = Callable[[DiffTensor], DiffTensor]


def _step_sizes(values: np.ndarray, h: Optional[float]) -> np.ndarray:
    if h is not None:
        return np.full(values.shape, float(h))
    return 1e-5 * np.maximum(1.0, np.abs(values))


def _relative_error(
    analytic: np.ndarray, numeric: np.ndarray, abs_tol: float
) -> float:
    diff = np.abs(analytic - numeric)
    rel = diff / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    rel = np.where(diff <= abs_tol, 0.0, rel)
    return float(rel.max()) if rel.size else 0.0


def finite_diff_check(
    f: ScalarFn,
    x: DiffTensor,
    h: Optional[float] = None,
    abs_tol: float = 0.0,
) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    Args:
        f: Function mapping a tensor shaped like ``x`` to a scalar tensor
        x: Evaluation point (its data is not modified)
        h: Fixed step; defaults to ``1e-5·max(1, |x_i|)`` per element
        abs_tol: Absolute differences at or below this count as exact

    Returns:
        max over elements of |analytic − numeric| / max(1e-8, |analytic| + |numeric|)
    """
    base = np.array(x.data, dtype=np.float64)
    with Tape():
        leaf = DiffTensor(base, requires_grad=True)
        backward(f(leaf))
        analytic = leaf.ensure_grad().copy()

    steps = _step_sizes(base, h)
    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            shifted = base.copy().reshape(-1)
            step = steps.reshape(-1)[i]
            shifted[i] += step
            f_plus = f(DiffTensor(shifted.reshape(base.shape))).item()
            shifted[i] -= 2.0 * step
            f_minus = f(DiffTensor(shifted.reshape(base.shape))).item()
            flat[i] = (f_plus - f_minus) / (2.0 * step)

    error = _relative_error(analytic, numeric, abs_tol)
    logger.debug(f"finite_diff_check on shape {base.shape}: max rel err {error:.3e}")
    return error


def parameter_grad_check(
    loss_fn: Callable[[], DiffTensor],
    parameter: DiffTensor,
    h: Optional[float] = None,
    abs_tol: float = 0.0,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Finite-difference check of a parameter that ``loss_fn`` reads in place.

    Only ``max_elements`` randomly chosen entries are perturbed when given.
    """
    parameter.zero_grad()
    with Tape():
        backward(loss_fn())
    analytic_full = parameter.ensure_grad().copy().reshape(-1)
    parameter.zero_grad()

    flat = parameter.data.reshape(-1)
    indices = np.arange(flat.size)
    if max_elements is not None and max_elements < flat.size:
        rng = rng or np.random.default_rng(0)
        indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
    steps = _step_sizes(flat[indices], h)

    numeric = np.zeros(len(indices))
    with no_grad():
        for pos, (i, step) in enumerate(zip(indices, steps)):
            original = flat[i]
            flat[i] = original + step
            f_plus = loss_fn().item()
            flat[i] = original - step
            f_minus = loss_fn().item()
            flat[i] = original
            numeric[pos] = (f_plus - f_minus) / (2.0 * step)

    return _relative_error(analytic_full[indices], numeric, abs_tol)
