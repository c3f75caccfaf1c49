"""
End-to-end harness for matching + loss without a network.

A proposal set (coordinates and confidences) is treated as free parameters and fitted to the
points of a scene by plain gradient descent: match, evaluate the selected loss variant, step,
repeat. Running this for every loss variant of the ablation grid over a suite of noisy scenes
gives a desk-scale version of the loss ablation.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from crowd_points.assignment import match_points
from crowd_points.losses import TTC, LossVariant, evaluate_loss
from crowd_points.metrics import count_from_proposals, evaluate_dataset
from crowd_points.points import (
    InvalidInput,
    LossConfig,
    Matching,
    PointMatchError,
    ProposalSet,
    ValidationError,
)
from crowd_points.synthetic import Scene

logger = logging.getLogger(__name__)

INITS = ("grid", "random")

# rows of the loss ablation table, by id
ABLATION_VARIANTS: Dict[int, LossVariant] = {
    1: LossVariant("mse", "ce", "none"),
    2: LossVariant("mse", "ce", "mae"),
    3: LossVariant("hsl1", "ce", "mae"),
    4: LossVariant("mse", "wce", "mae"),
    5: LossVariant("mse", "ce", "hrc"),
    6: LossVariant("hsl1", "wce", "mae"),
    7: LossVariant("hsl1", "ce", "hrc"),
    8: LossVariant("mse", "wce", "hrc"),
    9: LossVariant("smooth_l1", "wce", "hrc"),
    10: LossVariant("hsl1", "wce", "hrc"),
}

TRACE_COLUMNS = ["step", "total", "l_reg", "l_cls", "l_cou", "mean_distance", "count"]


class DivergenceDetected(PointMatchError):
    """The loss or the parameters became non-finite"""

    pass


@dataclass(frozen=True)
class FitConfig:
    """
    :param steps: number of gradient steps
    :param lr_coord: learning rate of the coordinates. The regression gradient is a mean over the
        N ground-truth points, so the step is ``lr_coord * N * grad``: pixels per unit
        per-point gradient, not plain gradient descent on the mean loss
    :param lr_conf: learning rate of the confidences; the classification gradient is stepped
        with ``lr_conf * N`` like the coordinates, the count gradient with ``lr_conf``
    :param proposal_factor: M = ceil(proposal_factor * N)
    :param init: "grid" (near-square lattice) or "random" (uniform positions)
    :param seed: seeds the lattice phase / random positions
    :param variant: which loss of the ablation grid to optimize
    :param rematch_every: recompute the matching every k steps
    :param freeze_confidences: keep the confidences at their initial value
    :param log_every: debug log period in steps
    """

    steps: int = 5000
    lr_coord: float = 1.0
    lr_conf: float = 0.05
    proposal_factor: float = 1.5
    init: str = "grid"
    seed: int = 0
    variant: LossVariant = field(default=TTC)
    rematch_every: int = 1
    freeze_confidences: bool = False
    log_every: int = 500

    def __post_init__(self):
        checks = {
            "steps": self.steps >= 0,
            "lr_coord": self.lr_coord > 0,
            "lr_conf": self.lr_conf > 0,
            "proposal_factor": self.proposal_factor >= 1,
            "init": self.init in INITS,
            "rematch_every": self.rematch_every >= 1,
            "log_every": self.log_every >= 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ValidationError(key, f"invalid value {getattr(self, key)!r}")


@dataclass(frozen=True, eq=False)
class FitTrace:
    """
    :param history: one row per step 0..steps with the columns of ``TRACE_COLUMNS``
    :param final: the proposals after the last step
    :param matching: the matching used at the last step
    """

    history: pd.DataFrame
    final: ProposalSet
    matching: Matching

    def __len__(self) -> int:
        return len(self.history)

    @property
    def initial_loss(self) -> float:
        return float(self.history["total"].iloc[0])

    @property
    def final_loss(self) -> float:
        return float(self.history["total"].iloc[-1])


def n_proposals(n: int, proposal_factor: float) -> int:
    """ceil(factor * N), immune to 1.1 * 10 = 11.000000000000002"""
    return int(math.ceil(round(proposal_factor * n, 9)))


def init_proposals(scene: Scene, cfg: FitConfig) -> ProposalSet:
    """
    Starting proposals, all with confidence 0.5.

    Grid mode fills a near-square lattice of cells (row-major, first M cells) and puts a point
    at each cell center, with the whole lattice shifted by a seeded phase of at most half a cell.
    """
    m = n_proposals(scene.n, cfg.proposal_factor)
    rng = np.random.default_rng(cfg.seed)
    size = np.array([scene.width, scene.height], dtype=np.float64)
    if cfg.init == "random":
        coords = rng.uniform(0.0, 1.0, size=(m, 2)) * size
    else:
        cols = max(1, math.ceil(math.sqrt(m * scene.width / scene.height))) if m else 1
        rows = max(1, math.ceil(m / cols))
        cell = size / np.array([cols, rows])
        index = np.arange(m)
        centers = np.stack([index % cols + 0.5, index // cols + 0.5], axis=1) * cell
        coords = centers + rng.uniform(-0.5, 0.5, size=2) * cell
    return ProposalSet(coords, np.full(m, 0.5))


def _mean_distance(scene: Scene, coords: np.ndarray, matching: Matching) -> float:
    matched = coords[np.array(matching.assignment, dtype=np.intp)]
    return float(np.mean(np.linalg.norm(matched - scene.gt.coords, axis=1)))


def fit_points(
    scene: Scene, cfg: FitConfig, loss_cfg: LossConfig = LossConfig(), initial: Optional[ProposalSet] = None
) -> FitTrace:
    """
    Fits proposals to the scene by gradient descent.

    Regression and classification are means over the N ground-truth points, so their
    gradients are stepped with ``lr * N`` and every proposal moves at a rate independent of the
    crowd size. The count term is global and is stepped with ``lr``. Confidences are projected
    onto [clamp, 1 - clamp] after every step.

    :param initial: starting proposals, ``init_proposals(scene, cfg)`` by default
    :raises DivergenceDetected: when the loss or the parameters become non-finite
    :return: FitTrace with ``cfg.steps + 1`` rows
    """
    if scene.n == 0:
        raise InvalidInput(f"{scene.image_id}: nothing to fit, the scene has no points")
    pred = init_proposals(scene, cfg) if initial is None else initial
    coords = np.array(pred.coords)
    conf = np.array(pred.confidences)
    n = scene.n
    low, high = loss_cfg.clamp, 1.0 - loss_cfg.clamp

    rows = []
    matching = None
    for step in range(cfg.steps + 1):
        pred = ProposalSet(coords, conf)
        if step % cfg.rematch_every == 0:
            try:
                matching = match_points(scene.gt, pred, loss_cfg)
            except InvalidInput as e:
                # overflowing distances
                raise DivergenceDetected(f"{scene.image_id}: matching failed at step {step}: {e}") from e
        report = evaluate_loss(scene.gt, pred, matching, loss_cfg, cfg.variant)
        if not np.isfinite(report.total):
            raise DivergenceDetected(f"{scene.image_id}: loss became {report.total} at step {step}")

        rows.append(
            (
                step,
                report.total,
                report.l_reg,
                report.l_cls,
                report.l_cou,
                _mean_distance(scene, coords, matching),
                count_from_proposals(pred, loss_cfg.threshold),
            )
        )
        if step % cfg.log_every == 0:
            logger.debug("%s step %d: loss %.6f, count %d", scene.image_id, step, report.total, rows[-1][-1])
        if step == cfg.steps:
            break

        coords = coords - cfg.lr_coord * n * report.grad_coords
        if not cfg.freeze_confidences:
            conf = np.clip(conf - cfg.lr_conf * (n * report.grad_conf_cls + report.grad_conf_cou), low, high)
        if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(conf))):
            raise DivergenceDetected(f"{scene.image_id}: parameters became non-finite at step {step + 1}")

    history = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return FitTrace(history=history, final=pred, matching=matching)


def _fit_record(scene: Scene, seed: int, variant_id: int, cfg: FitConfig, loss_cfg: LossConfig, clean: dict) -> dict:
    record = {
        "variant_id": variant_id,
        "variant": cfg.variant.label,
        "seed": seed,
        "image_id": scene.image_id,
        "gt_count": scene.n,
        "clean_count": clean.get(scene.image_id, np.nan),
    }
    if scene.n == 0:
        # noise deleted every point: M = 0 proposals, nothing to fit
        logger.info("%s: no annotated points left, recording a count of 0", scene.image_id)
        return {**record, "pred_count": 0, "mean_distance": np.nan, "final_loss": np.nan}

    trace = fit_points(scene, replace(cfg, seed=seed), loss_cfg)
    last = trace.history.iloc[-1]
    return {
        **record,
        "pred_count": int(last["count"]),
        "mean_distance": float(last["mean_distance"]),
        "final_loss": float(last["total"]),
    }


def fit_suite(
    scenes: Sequence[Scene],
    variant: LossVariant,
    seeds: Sequence[int],
    cfg: FitConfig = FitConfig(),
    loss_cfg: LossConfig = LossConfig(),
    variant_id: int = 0,
    clean_counts: Optional[Mapping[str, int]] = None,
    workers: int = 1,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Fits every scene for every seed with one loss variant.

    :param clean_counts: counts before noise injection, by image id, reported next to the
        annotated counts
    :return: DataFrame with one row per (seed, scene), in that order
    """
    cfg = replace(cfg, variant=variant)
    clean = dict(clean_counts or {})
    jobs = [(scene, seed) for seed in seeds for scene in scenes]

    def run(job):
        return _fit_record(job[0], job[1], variant_id, cfg, loss_cfg, clean)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(run, jobs)
            records = list(tqdm(results, total=len(jobs), desc=variant.label, disable=not progress))
    else:
        records = [run(job) for job in tqdm(jobs, desc=variant.label, disable=not progress)]
    return pd.DataFrame.from_records(records)


def summarize_fits(records: pd.DataFrame) -> pd.DataFrame:
    """
    Seed-averaged MAE/MSE per variant.

    For every (variant, seed) the counts over the scenes are evaluated with
    :func:`evaluate_dataset`; the per-seed metrics are then averaged. ``mae``/``mse`` compare
    against the annotations the fit saw, ``mae_clean``/``mse_clean`` against the counts before
    noise injection when they are known.
    """
    rows = []
    for (variant_id, label), group in records.groupby(["variant_id", "variant"], sort=False):
        per_seed = []
        for _, fits in group.groupby("seed", sort=True):
            annotated = evaluate_dataset(zip(fits["gt_count"], fits["pred_count"]), list(fits["image_id"]))
            if fits["clean_count"].notna().all():
                clean = evaluate_dataset(zip(fits["clean_count"], fits["pred_count"]), list(fits["image_id"]))
                clean_metrics = (clean.mae, clean.mse)
            else:
                clean_metrics = (np.nan, np.nan)
            per_seed.append((annotated.mae, annotated.mse) + clean_metrics)
        means = np.mean(np.array(per_seed, dtype=np.float64), axis=0)
        rows.append(
            {
                "id": int(variant_id),
                "variant": label,
                "mae": means[0],
                "mse": means[1],
                "mae_clean": means[2],
                "mse_clean": means[3],
                "fits": len(group),
            }
        )
    return pd.DataFrame(rows, columns=["id", "variant", "mae", "mse", "mae_clean", "mse_clean", "fits"])


def run_ablation(
    scenes: Sequence[Scene],
    variants: Mapping[int, LossVariant] = ABLATION_VARIANTS,
    seeds: Sequence[int] = (0,),
    cfg: FitConfig = FitConfig(),
    loss_cfg: LossConfig = LossConfig(),
    clean_counts: Optional[Mapping[str, int]] = None,
    workers: int = 1,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Fits every (scene, seed) with every variant and aggregates the counting metrics.

    :return: one row per variant: id, variant, mae, mse, mae_clean, mse_clean, fits
    """
    if not scenes:
        raise InvalidInput("the ablation needs at least one scene")
    if not seeds:
        raise InvalidInput("the ablation needs at least one seed")
    records = [
        fit_suite(scenes, variant, seeds, cfg, loss_cfg, variant_id, clean_counts, workers, progress)
        for variant_id, variant in variants.items()
    ]
    return summarize_fits(pd.concat(records, ignore_index=True))
