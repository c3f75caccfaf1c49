"""
The three-task combination (TTC) loss and the baselines it is ablated against.

Given a fixed matching, the loss is ``lambda1 * L_cls + lambda2 * L_reg + lambda3 * L_cou``:

- regression: mean of ``log(s + 1)`` over matched pairs, ``s`` the smooth L1 distance (HSL1)
- classification: weighted cross-entropy over matched (positive) and unmatched proposals (WCE)
- counting: ``|M - N| * log(|M - N| / (N + eps) + 1)`` (HRC)

Every function here returns analytic gradients with respect to the proposal coordinates and
confidences. The matching is a constant while differentiating; it is recomputed between steps.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from crowd_points.metrics import count_from_proposals
from crowd_points.points import (
    InvalidInput,
    LengthMismatch,
    LossConfig,
    LossReport,
    Matching,
    Point,
    PointMatchError,
    PointSet,
    ProposalSet,
    validate_matching,
)

logger = logging.getLogger(__name__)

REGRESSION_LOSSES = ("mse", "smooth_l1", "hsl1")
CLASSIFICATION_LOSSES = ("ce", "wce")
COUNTING_LOSSES = ("none", "mae", "hrc")

_LABELS = {
    "mse": "MSE",
    "smooth_l1": "SmoothL1",
    "hsl1": "HSL1",
    "ce": "CE",
    "wce": "WCE",
    "none": "-",
    "mae": "MAE",
    "hrc": "HRC",
}


class InvalidAlpha(PointMatchError):
    """Classification weight outside [0, 1]"""

    pass


@dataclass(frozen=True)
class LossVariant:
    """One row of the loss ablation grid: which regression, classification and counting loss to use"""

    regression: str = "hsl1"
    classification: str = "wce"
    counting: str = "hrc"

    def __post_init__(self):
        for name, value, allowed in (
            ("regression", self.regression, REGRESSION_LOSSES),
            ("classification", self.classification, CLASSIFICATION_LOSSES),
            ("counting", self.counting, COUNTING_LOSSES),
        ):
            if value not in allowed:
                raise InvalidInput(f"unknown {name} loss {value!r}, expected one of {allowed}")

    @property
    def label(self) -> str:
        return "+".join(_LABELS[v] for v in (self.regression, self.classification, self.counting))


TTC = LossVariant("hsl1", "wce", "hrc")


def _as_coords(points: Union[PointSet, Sequence[Point], np.ndarray]) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.coords
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 2).astype(np.float64)
    return PointSet.from_points(points).coords


def _smooth_l1_rows(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise smooth L1 of displacements ``d`` (n, 2) and its gradient with respect to ``d``"""
    l1 = np.abs(d).sum(axis=1)
    quadratic = l1 < 1.0
    s = np.where(quadratic, 0.5 * (d**2).sum(axis=1), l1 - 0.5)
    ds = np.where(quadratic[:, np.newaxis], d, np.sign(d))
    return s, ds


def smooth_l1(p: Point, q: Point) -> float:
    """
    ``0.5 * ||p - q||_2^2`` when ``||p - q||_1 < 1``, else ``||p - q||_1 - 0.5``.

    The branch test uses the L1 norm while the quadratic branch uses the squared L2 norm.
    """
    s, _ = _smooth_l1_rows(np.array([[p.x - q.x, p.y - q.y]]))
    return float(s[0])


def _regression(kind: str, gt: np.ndarray, matched: np.ndarray) -> Tuple[float, np.ndarray]:
    """Value and gradient w.r.t. the matched proposal coordinates"""
    n = gt.shape[0]
    d = matched - gt
    if kind == "mse":
        return float(np.mean((d**2).sum(axis=1))), 2.0 * d / n
    s, ds = _smooth_l1_rows(d)
    if kind == "smooth_l1":
        return float(np.mean(s)), ds / n
    return float(np.mean(np.log1p(s))), ds / ((1.0 + s)[:, np.newaxis] * n)


def hsl1_regression_loss(gt: PointSet, matched: Union[PointSet, Sequence[Point], np.ndarray]) -> float:
    """
    Highly smoothed L1: ``(1/N) * sum_i log(s(p_i, p̄_i) + 1)``.

    :param gt: the N ground-truth points
    :param matched: the N matched proposal points, in GT order
    :raises LengthMismatch: when the two lists differ in length
    """
    matched = _as_coords(matched)
    if gt.n != matched.shape[0]:
        raise LengthMismatch(f"{gt.n} ground-truth points but {matched.shape[0]} matched points")
    if gt.n == 0:
        raise InvalidInput("regression loss needs at least one pair")
    value, _ = _regression("hsl1", gt.coords, matched)
    return value


def _check_alpha(alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidAlpha(f"alpha must lie in [0, 1], got {alpha}")


def _classification(
    confidences: np.ndarray,
    matching: Matching,
    weight_matched: float,
    weight_unmatched: float,
    mode: str,
    clamp: float,
) -> Tuple[float, np.ndarray]:
    """
    Weighted cross-entropy, value and gradient w.r.t. every confidence.

    Confidences are clipped to [clamp, 1 - clamp]; the clip passes gradient on the closed
    interval so a proposal sitting on the clamp can still leave it.
    """
    n = matching.n
    matched = np.array(matching.assignment, dtype=np.intp)
    unmatched = np.array(matching.unmatched, dtype=np.intp)
    t = np.clip(confidences, clamp, 1.0 - clamp)
    passes = ((confidences >= clamp) & (confidences <= 1.0 - clamp)).astype(np.float64)

    t_m, t_u = t[matched], t[unmatched]
    grad = np.zeros_like(t)
    grad[matched] = -weight_matched / (n * t_m) * passes[matched]
    if mode == "literal":
        unmatched_term = np.sum(1.0 - np.log(t_u))
        grad[unmatched] = weight_unmatched / (n * t_u) * passes[unmatched]
    else:
        unmatched_term = np.sum(np.log1p(-t_u))
        grad[unmatched] = weight_unmatched / (n * (1.0 - t_u)) * passes[unmatched]
    value = -(weight_matched * np.sum(np.log(t_m)) + weight_unmatched * unmatched_term) / n
    return float(value), grad


def wce_classification_loss(
    matching: Matching, pred: ProposalSet, alpha: float, mode: str = "standard", clamp: float = 1e-7
) -> float:
    """
    Weighted cross-entropy over matched and unmatched proposals, normalized by N.

    ``standard``: ``-(1/N) [alpha * sum_matched log t + (1 - alpha) * sum_unmatched log(1 - t)]``

    ``literal``: the unmatched term is ``(1 - log t)``. That form is unbounded below as t -> 0
    and is kept only for comparison runs.

    :raises InvalidAlpha: alpha outside [0, 1]
    """
    _check_alpha(alpha)
    if mode not in ("standard", "literal"):
        raise InvalidInput(f"unknown wce mode {mode!r}")
    validate_matching(matching, pred.m)
    if matching.n == 0:
        raise InvalidInput("classification loss needs at least one matched proposal")
    value, _ = _classification(pred.confidences, matching, alpha, 1.0 - alpha, mode, clamp)
    return value


def _hrc(n: int, m_eff: float, epsilon: float) -> Tuple[float, float]:
    """HRC value and derivative with respect to ``m_eff`` (0 at m_eff == n)"""
    diff = m_eff - n
    a = abs(diff)
    r = a / (n + epsilon)
    value = a * np.log1p(r)
    slope = np.log1p(r) + r / (1.0 + r)
    return float(value), float(np.sign(diff) * slope)


def hrc_count_loss(n: int, m_eff: float, epsilon: float) -> float:
    """``|M - N| * log(|M - N| / (N + epsilon) + 1)``"""
    if n < 0 or m_eff < 0:
        raise InvalidInput(f"counts must be non-negative, got N={n}, M={m_eff}")
    if epsilon <= 0:
        raise InvalidInput(f"epsilon must be positive, got {epsilon}")
    return _hrc(n, m_eff, epsilon)[0]


def effective_count(pred: ProposalSet, cfg: LossConfig) -> float:
    """Soft count (sum of confidences) or hard count (confidences at or above the threshold)"""
    if cfg.hrc_count_mode == "soft":
        return float(np.sum(pred.confidences))
    return float(count_from_proposals(pred, cfg.threshold))


def _counting(kind: str, n: int, pred: ProposalSet, cfg: LossConfig) -> Tuple[float, float]:
    """Value and derivative with respect to the count; the derivative only flows in soft mode"""
    if kind == "none":
        return 0.0, 0.0
    m_eff = effective_count(pred, cfg)
    if kind == "mae":
        value, slope = abs(m_eff - n), float(np.sign(m_eff - n))
    else:
        value, slope = _hrc(n, m_eff, cfg.epsilon)
    return value, slope if cfg.hrc_count_mode == "soft" else 0.0


def evaluate_loss(
    gt: PointSet, pred: ProposalSet, matching: Matching, cfg: LossConfig, variant: LossVariant = TTC
) -> LossReport:
    """
    Any loss of the ablation grid, weighted like the TTC loss, with analytic gradients.

    :param gt: ground-truth points, N >= 1
    :param pred: proposals, M >= N
    :param matching: matching of ``gt`` into ``pred``, held constant
    :param cfg: weights, clamps and modes
    :param variant: regression / classification / counting selection
    :return: LossReport
    """
    validate_matching(matching, pred.m)
    if matching.n != gt.n:
        raise LengthMismatch(f"matching covers {matching.n} points but there are {gt.n} ground-truth points")
    if gt.n == 0:
        raise InvalidInput("loss needs at least one ground-truth point")
    _check_alpha(cfg.alpha)

    matched = np.array(matching.assignment, dtype=np.intp)
    l_reg, reg_grad = _regression(variant.regression, gt.coords, pred.coords[matched])

    if variant.classification == "wce":
        weights = (cfg.alpha, 1.0 - cfg.alpha)
        mode = cfg.wce_mode
    else:
        weights = (1.0, 1.0)
        mode = "standard"
    l_cls, cls_grad = _classification(pred.confidences, matching, *weights, mode, cfg.clamp)

    l_cou, count_slope = _counting(variant.counting, gt.n, pred, cfg)

    grad_coords = np.zeros((pred.m, 2))
    grad_coords[matched] = cfg.lambda2 * reg_grad
    grad_conf_cls = cfg.lambda1 * cls_grad
    grad_conf_cou = np.full(pred.m, cfg.lambda3 * count_slope)
    total = cfg.lambda1 * l_cls + cfg.lambda2 * l_reg + cfg.lambda3 * l_cou

    return LossReport(
        l_reg=l_reg,
        l_cls=l_cls,
        l_cou=l_cou,
        total=float(total),
        grad_coords=grad_coords,
        grad_conf=grad_conf_cls + grad_conf_cou,
        grad_conf_cls=grad_conf_cls,
        grad_conf_cou=grad_conf_cou,
    )


def ttc_total(gt: PointSet, pred: ProposalSet, matching: Matching, cfg: LossConfig) -> LossReport:
    """``lambda1 * WCE + lambda2 * HSL1 + lambda3 * HRC`` and its gradients"""
    return evaluate_loss(gt, pred, matching, cfg, TTC)


def finite_diff_gradient(
    f: Callable[[ProposalSet], float], pred: ProposalSet, h: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central differences ``(f(x + h) - f(x - h)) / 2h`` for every coordinate and confidence.

    Evaluate away from kinks (L1 distance 1, clamp boundaries, soft count equal to N) and keep
    confidences at least ``h`` inside [0, 1].

    :return: (grad_coords of shape (M, 2), grad_conf of shape (M,))
    """
    if h <= 0:
        raise InvalidInput(f"step must be positive, got {h}")
    coords, conf = pred.coords, pred.confidences
    grad_coords = np.zeros_like(coords)
    grad_conf = np.zeros_like(conf)
    for j in range(pred.m):
        for k in range(2):
            step = np.zeros_like(coords)
            step[j, k] = h
            grad_coords[j, k] = (f(ProposalSet(coords + step, conf)) - f(ProposalSet(coords - step, conf))) / (2 * h)
        step = np.zeros_like(conf)
        step[j] = h
        grad_conf[j] = (f(ProposalSet(coords, conf + step)) - f(ProposalSet(coords, conf - step))) / (2 * h)
    return grad_coords, grad_conf


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, 0 when both are zero"""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(np.asarray(analytic) - np.asarray(numeric)) / scale)
