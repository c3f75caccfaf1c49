"""
Domain types shared by every part of the package.

Ground-truth head annotations are a :class:`PointSet`, predictions are a :class:`ProposalSet`
(points plus the confidence that each one is a person), and a :class:`Matching` pairs every
ground-truth point with exactly one proposal. All of them are immutable; array payloads are
stored as read-only numpy arrays so they can be handed to worker threads freely.
"""
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Tuple, Union

import numpy as np


class PointMatchError(ValueError):
    """Root of every error raised by crowd_points"""

    pass


class InvalidInput(PointMatchError):
    """Non-finite coordinates, out of range confidences, malformed matchings, ..."""

    pass


class CountMismatch(PointMatchError):
    """More ground-truth points than proposals, so no injective matching exists"""

    def __init__(self, message: str, image_id: str = None):
        super().__init__(message)
        self.image_id = image_id


class LengthMismatch(PointMatchError):
    """Two sequences that must pair up element-wise have different lengths"""

    pass


class ValidationError(PointMatchError):
    """A configuration value is missing, unknown or out of range. ``key`` names it."""

    def __init__(self, key: str, message: str = ""):
        super().__init__(f"{key}: {message}" if message else key)
        self.key = key


def _frozen_array(values, shape_tail: tuple, name: str) -> np.ndarray:
    """Copies into a read-only float64 array and checks the trailing shape and finiteness"""
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise InvalidInput(f"{name} must have shape (n, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Point:
    """A 2-D location in raw pixel coordinates"""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInput(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


PointLike = Union[Point, Tuple[float, float]]


@dataclass(frozen=True, eq=False)
class PointSet:
    """
    Ordered ground-truth points P, stored as an (N, 2) array.

    :param coords: array-like of shape (N, 2)
    """

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen_array(self.coords, (2,), "coords"))

    @classmethod
    def from_points(cls, points: Iterable[PointLike]) -> "PointSet":
        rows = [(p.x, p.y) if isinstance(p, Point) else tuple(p) for p in points]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, 2))

    @classmethod
    def empty(cls) -> "PointSet":
        return cls(np.zeros((0, 2)))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> Tuple[Point, ...]:
        return tuple(Point(float(x), float(y)) for x, y in self.coords)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Point]:
        return iter(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointSet):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)

    __hash__ = None


@dataclass(frozen=True)
class Proposal:
    """A predicted point and the confidence that it is a person"""

    point: Point
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInput(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """
    Ordered proposals: (M, 2) coordinates and (M,) confidences. Confidences are stored as given,
    clamping only happens inside the logarithms of the losses.
    """

    coords: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        coords = _frozen_array(self.coords, (2,), "coords")
        confidences = _frozen_array(self.confidences, (), "confidences")
        if coords.shape[0] != confidences.shape[0]:
            raise LengthMismatch(f"{coords.shape[0]} proposal points but {confidences.shape[0]} confidences")
        if np.any(confidences < 0.0) or np.any(confidences > 1.0):
            raise InvalidInput("confidences must lie in [0, 1]")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "confidences", confidences)

    @classmethod
    def from_proposals(cls, proposals: Iterable[Proposal]) -> "ProposalSet":
        proposals = list(proposals)
        coords = np.array([(p.point.x, p.point.y) for p in proposals], dtype=np.float64).reshape(-1, 2)
        return cls(coords, np.array([p.confidence for p in proposals], dtype=np.float64))

    @classmethod
    def empty(cls) -> "ProposalSet":
        return cls(np.zeros((0, 2)), np.zeros(0))

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    @property
    def proposals(self) -> Tuple[Proposal, ...]:
        return tuple(
            Proposal(Point(float(x), float(y)), float(t)) for (x, y), t in zip(self.coords, self.confidences)
        )

    def __len__(self) -> int:
        return self.m

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProposalSet):
            return NotImplemented
        return np.array_equal(self.coords, other.coords) and np.array_equal(self.confidences, other.confidences)

    __hash__ = None


@dataclass(frozen=True)
class Matching:
    """
    Injective map from ground-truth indices to proposal indices.

    ``assignment[i]`` is the proposal matched to GT point ``i``; ``unmatched`` holds the other
    proposal indices in ascending order. ``order`` is the reordering P̄: matched proposals first,
    in GT order, then the unmatched ones.
    """

    assignment: Tuple[int, ...]
    unmatched: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(j) for j in self.assignment))
        object.__setattr__(self, "unmatched", tuple(int(j) for j in self.unmatched))

    @classmethod
    def from_assignment(cls, assignment: Iterable[int], m: int) -> "Matching":
        assignment = tuple(int(j) for j in assignment)
        taken = set(assignment)
        return cls(assignment, tuple(j for j in range(m) if j not in taken))

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def m(self) -> int:
        return len(self.assignment) + len(self.unmatched)

    @property
    def order(self) -> Tuple[int, ...]:
        return self.assignment + self.unmatched

    def reorder(self, pred: ProposalSet) -> ProposalSet:
        """Returns P̄, the proposals in matched-first order"""
        validate_matching(self, pred.m)
        idx = np.array(self.order, dtype=np.intp)
        return ProposalSet(pred.coords[idx], pred.confidences[idx])


def validate_matching(matching: Matching, m: int) -> Matching:
    """
    Checks that ``assignment`` is injective and that ``assignment ∪ unmatched`` is a permutation
    of ``0..m-1``.

    :raises InvalidInput: when either condition fails
    :return: the matching, for chaining
    """
    if len(set(matching.assignment)) != len(matching.assignment):
        raise InvalidInput(f"assignment is not injective: {matching.assignment}")
    if sorted(matching.order) != list(range(m)):
        raise InvalidInput(f"assignment and unmatched do not partition 0..{m - 1}")
    if list(matching.unmatched) != sorted(matching.unmatched):
        raise InvalidInput("unmatched indices must be ascending")
    return matching


WCE_MODES = ("standard", "literal")
COUNT_MODES = ("hard", "soft")


@dataclass(frozen=True)
class LossConfig:
    """
    Scalar hyperparameters of matching and the TTC loss.

    :param gamma: distance weight of the matching cost
    :param alpha: matched/unmatched balance of the weighted cross-entropy
    :param epsilon: stabilizer of the count loss denominator
    :param lambda1: weight of the classification loss
    :param lambda2: weight of the regression loss
    :param lambda3: weight of the count loss
    :param clamp: confidences are clipped to [clamp, 1 - clamp] inside logarithms
    :param threshold: confidence at or above which a proposal counts as a person
    :param wce_mode: "standard" (binary cross-entropy reading) or "literal" (1 - log t for unmatched)
    :param hrc_count_mode: "soft" (sum of confidences) or "hard" (thresholded count)
    """

    gamma: float = 0.05
    alpha: float = 0.5
    epsilon: float = 1e-8
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    clamp: float = 1e-7
    threshold: float = 0.5
    wce_mode: str = "standard"
    hrc_count_mode: str = "soft"

    def __post_init__(self):
        checks = {
            "gamma": self.gamma > 0,
            "alpha": 0.0 <= self.alpha <= 1.0,
            "epsilon": self.epsilon > 0,
            "lambda1": self.lambda1 >= 0,
            "lambda2": self.lambda2 >= 0,
            "lambda3": self.lambda3 >= 0,
            "clamp": 0.0 < self.clamp < 0.5,
            "threshold": 0.0 < self.threshold < 1.0,
            "wce_mode": self.wce_mode in WCE_MODES,
            "hrc_count_mode": self.hrc_count_mode in COUNT_MODES,
        }
        for key, ok in checks.items():
            if not ok:
                raise ValidationError(key, f"invalid value {getattr(self, key)!r}")


@dataclass(frozen=True, eq=False)
class LossReport:
    """
    Component losses, their weighted total and the gradients with respect to every proposal.

    ``grad_conf`` is ``grad_conf_cls + grad_conf_cou``: the split lets an optimizer scale the
    per-point and the global part of the confidence gradient differently.
    """

    l_reg: float
    l_cls: float
    l_cou: float
    total: float
    grad_coords: np.ndarray
    grad_conf: np.ndarray
    grad_conf_cls: np.ndarray = field(default=None)
    grad_conf_cou: np.ndarray = field(default=None)

    def as_dict(self) -> dict:
        return {"l_reg": self.l_reg, "l_cls": self.l_cls, "l_cou": self.l_cou, "total": self.total}
