"""
Pairing of ground-truth points with proposals.

The cost of pairing GT point i with proposal j is ``gamma * ||p_i - p̂_j||_2 - t̂_j``: near and
confident proposals are cheap. The Hungarian algorithm then picks the injective assignment of
the N ground-truth points to N of the M proposals with minimum total cost; the remaining M - N
proposals are unmatched and are treated as background by the losses.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from crowd_points.points import (
    CountMismatch,
    InvalidInput,
    LossConfig,
    Matching,
    PointMatchError,
    PointSet,
    ProposalSet,
)

logger = logging.getLogger(__name__)

# enumeration bound of the brute force oracle
MAX_BRUTE_FORCE_ROWS = 8
MAX_BRUTE_FORCE_COLS = 10

METHODS = ("scipy", "rectangular", "padded")


class TooLarge(PointMatchError):
    """Instance too large to enumerate exhaustively"""

    pass


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """(N, M) matrix of pairing costs with N <= M. Entries may be negative."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInput(f"cost matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] > values.shape[1]:
            raise CountMismatch(f"{values.shape[0]} ground-truth points but only {values.shape[1]} proposals")
        if not np.all(np.isfinite(values)):
            raise InvalidInput("cost matrix contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def build_cost_matrix(gt: PointSet, pred: ProposalSet, gamma: float) -> CostMatrix:
    """
    Builds ``C_ij = gamma * ||p_i - p̂_j||_2 - t̂_j`` on raw pixel coordinates.

    :param gt: ground-truth points, N >= 1
    :param pred: proposals, M >= N
    :param gamma: weight of the distance term, > 0
    :return: CostMatrix of shape (N, M)
    """
    if gamma <= 0 or not np.isfinite(gamma):
        raise InvalidInput(f"gamma must be positive, got {gamma}")
    if gt.n == 0:
        raise InvalidInput("at least one ground-truth point is required")
    if gt.n > pred.m:
        raise CountMismatch(f"{gt.n} ground-truth points but only {pred.m} proposals")
    distances = cdist(gt.coords, pred.coords)
    return CostMatrix(gamma * distances - pred.confidences[np.newaxis, :])


def _solve_rectangular(cost: np.ndarray) -> np.ndarray:
    """
    Shortest augmenting path Hungarian algorithm with row and column potentials, for n <= m.

    Rows are inserted one at a time; each insertion grows a Dijkstra-like tree over the columns
    (reduced costs stay non-negative thanks to the potentials) until it reaches a free column,
    then flips the assignment along the path. Arrays are 1-indexed with column 0 as the root.

    :return: array of length n, column index per row
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.intp)  # owner[j] = row holding column j, 0 if free
    way = np.zeros(m + 1, dtype=np.intp)

    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0

            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]

            visited = np.flatnonzero(used)
            u[owner[visited]] += delta
            v[visited] -= delta
            minv[1:][free] -= delta

            j0 = j1
            if owner[j0] == 0:
                break

        # flip the augmenting path back to the root
        while j0 != 0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.intp)
    for j in range(1, m + 1):
        if owner[j]:
            assignment[owner[j] - 1] = j - 1
    return assignment


def _solve_padded(cost: np.ndarray) -> np.ndarray:
    """Pads to a square matrix with constant rows; constant rows add the same cost to every assignment"""
    n, m = cost.shape
    fill = float(np.abs(cost).max()) * m + 1.0
    square = np.vstack([cost, np.full((m - n, m), fill)])
    return _solve_rectangular(square)[:n]


def hungarian_match(cost: CostMatrix, method: str = "scipy") -> Matching:
    """
    Minimum-cost injective assignment of every row to a distinct column.

    :param cost: CostMatrix with N <= M
    :param method: "scipy" (compiled solver), "rectangular" (N x M directly) or "padded" (M x M)
    :return: Matching with unmatched proposals in ascending order
    """
    values = cost.values
    if values.shape[0] == 0:
        return Matching.from_assignment((), values.shape[1])
    if method == "scipy":
        rows, cols = linear_sum_assignment(values)
        assignment = np.empty(values.shape[0], dtype=np.intp)
        assignment[rows] = cols
    elif method == "rectangular":
        assignment = _solve_rectangular(values)
    elif method == "padded":
        assignment = _solve_padded(values)
    else:
        raise InvalidInput(f"unknown matching method {method!r}, expected one of {METHODS}")
    return Matching.from_assignment(assignment, values.shape[1])


def brute_force_match(cost: CostMatrix) -> Matching:
    """
    Enumerates every injective map rows -> columns and returns a minimizer. Test oracle only.

    :raises TooLarge: beyond 8 rows or 10 columns
    """
    n, m = cost.values.shape
    if n > MAX_BRUTE_FORCE_ROWS or m > MAX_BRUTE_FORCE_COLS:
        raise TooLarge(f"{n}x{m} exceeds the {MAX_BRUTE_FORCE_ROWS}x{MAX_BRUTE_FORCE_COLS} enumeration bound")
    rows = np.arange(n)
    best, best_cost = None, np.inf
    for candidate in itertools.permutations(range(m), n):
        total = float(np.sum(cost.values[rows, np.array(candidate, dtype=np.intp)]))
        if total < best_cost:
            best, best_cost = candidate, total
    return Matching.from_assignment(best, m)


def matching_cost(cost: CostMatrix, matching: Matching) -> float:
    """Sum of the matched entries, in row order"""
    rows = np.arange(cost.n)
    return float(np.sum(cost.values[rows, np.array(matching.assignment, dtype=np.intp)]))


def match_points(gt: PointSet, pred: ProposalSet, cfg: LossConfig, method: str = "scipy") -> Matching:
    """Builds the cost matrix with ``cfg.gamma`` and solves it"""
    matching = hungarian_match(build_cost_matrix(gt, pred, cfg.gamma), method=method)
    logger.debug("matched %d ground-truth points to %d proposals", gt.n, pred.m)
    return matching
