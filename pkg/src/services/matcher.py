"""Rectangular minimum-cost assignment with deterministic tie-breaking."""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.core.exceptions import ContractError

logger = logging.getLogger(__name__)

# Relative slack when deciding that a constrained solve still reaches the optimum.
OPTIMUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Assignment:
    rows: np.ndarray
    cols: np.ndarray
    total: float

    def pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self) -> int:
        return len(self.rows)


def _optimum(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def _canonical_pairs(cost: np.ndarray, best: float) -> List[Tuple[int, int]]:
    """Lexicographically first list of ``(row, col)`` pairs reaching ``best``.

    Rows are visited in order; each takes the smallest free column whose
    choice still leaves an optimal completion.  A row with no such column
    stays unmatched (only possible when rows outnumber columns).
    """
    n, m = cost.shape
    size = min(n, m)
    tol = OPTIMUM_TOLERANCE * max(1.0, abs(best))
    pairs: List[Tuple[int, int]] = []
    free = list(range(m))
    spent = 0.0
    for i in range(n):
        if len(pairs) == size:
            break
        rest_rows = np.arange(i + 1, n)
        needed = size - len(pairs) - 1
        for j in free:
            remaining = [c for c in free if c != j]
            if min(len(rest_rows), len(remaining)) < needed:
                continue
            completion = _optimum(cost[np.ix_(rest_rows, remaining)])
            if spent + cost[i, j] + completion <= best + tol:
                pairs.append((i, j))
                spent += cost[i, j]
                free.remove(j)
                break
    if len(pairs) != size:
        raise ContractError("assignment canonicalisation lost the optimum")
    return pairs


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of size ``min(n, m)``.

    Among optimal assignments the lexicographically smallest ``(row, col)``
    pair list is returned.

    Raises:
        ContractError: for NaN or infinite entries
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ContractError("cost matrix contains NaN or infinite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Assignment(empty, empty, 0.0)

    pairs = _canonical_pairs(cost, _optimum(cost))
    rows = np.array([p[0] for p in pairs], dtype=np.int64)
    cols = np.array([p[1] for p in pairs], dtype=np.int64)
    total = float(cost[rows, cols].sum())
    logger.debug(f"hungarian {n}x{m}: total cost {total:.6f}")
    return Assignment(rows, cols, total)
