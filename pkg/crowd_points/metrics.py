"""Counting metrics. "MSE" follows the crowd-counting convention and is the root of the mean squared error."""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from crowd_points.annotations import SchemaError
from crowd_points.points import PointMatchError, PointSet, ProposalSet

logger = logging.getLogger(__name__)


class EmptyDataset(PointMatchError):
    """Metrics over zero images are undefined"""

    pass


@dataclass(frozen=True, eq=False)
class EvalResult:
    """
    :param per_image: DataFrame with columns image_id, gt_count, pred_count
    :param mae: mean absolute count error
    :param mse: root mean squared count error
    """

    per_image: pd.DataFrame
    mae: float
    mse: float


def count_from_proposals(pred: ProposalSet, threshold: float = 0.5) -> int:
    """Number of proposals with confidence >= threshold"""
    return int(np.count_nonzero(pred.confidences >= threshold))


def evaluate_dataset(pairs: Iterable[Tuple[float, float]], image_ids: Optional[Sequence[str]] = None) -> EvalResult:
    """
    MAE and (root) MSE of predicted counts against ground-truth counts.

    :param pairs: (gt count, predicted count) per image
    :param image_ids: optional ids, positional indices by default
    :raises EmptyDataset: on an empty list
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("cannot evaluate an empty dataset")
    gt = np.array([p[0] for p in pairs], dtype=np.float64)
    pred = np.array([p[1] for p in pairs], dtype=np.float64)
    if image_ids is None:
        image_ids = [str(i) for i in range(len(pairs))]

    errors = pred - gt
    mae = float(np.mean(np.abs(errors)))
    mse = float(np.sqrt(np.mean(errors**2)))
    per_image = pd.DataFrame({"image_id": list(image_ids), "gt_count": gt, "pred_count": pred})
    logger.info("evaluated %d images: MAE=%.4f MSE=%.4f", len(pairs), mae, mse)
    return EvalResult(per_image=per_image, mae=mae, mse=mse)


def evaluate_predictions(
    ground_truth: Sequence[Tuple[str, PointSet]],
    predictions: Sequence[Tuple[str, ProposalSet]],
    threshold: float = 0.5,
) -> EvalResult:
    """
    Joins ground truth and predictions by image id and evaluates the decoded counts.

    Rows come out sorted by image id.

    :raises SchemaError: when the two files do not cover the same image ids
    """
    gt_by_id = dict(ground_truth)
    pred_by_id = dict(predictions)
    if set(gt_by_id) != set(pred_by_id):
        missing = sorted(set(gt_by_id) ^ set(pred_by_id))
        raise SchemaError(f"image ids present in only one file: {', '.join(missing)}")
    image_ids = sorted(gt_by_id)
    pairs = [(gt_by_id[i].n, count_from_proposals(pred_by_id[i], threshold)) for i in image_ids]
    return evaluate_dataset(pairs, image_ids)
