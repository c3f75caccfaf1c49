import math
from unittest import TestCase

import numpy as np

from crowd_points.annotations import SchemaError
from crowd_points.metrics import EmptyDataset, count_from_proposals, evaluate_dataset, evaluate_predictions
from crowd_points.points import PointSet, ProposalSet


class CountTests(TestCase):
    def test_threshold_is_inclusive(self):
        assert count_from_proposals(ProposalSet.empty()) == 0
        assert count_from_proposals(ProposalSet(np.zeros((3, 2)), [0.9, 0.4, 0.6]), 0.5) == 2
        assert count_from_proposals(ProposalSet(np.zeros((4, 2)), [0.3] * 4), 0.3) == 4


class EvaluateDatasetTests(TestCase):
    def test_spot_values(self):
        result = evaluate_dataset([(5, 5), (7, 7)])
        assert result.mae == 0.0 and result.mse == 0.0

        result = evaluate_dataset([(100, 110), (100, 90)])
        assert result.mae == 10.0 and result.mse == 10.0

        result = evaluate_dataset([(100, 100), (100, 120)])
        assert result.mae == 10.0
        assert abs(result.mse - math.sqrt(200)) < 1e-12

    def test_empty(self):
        with self.assertRaises(EmptyDataset):
            evaluate_dataset([])

    def test_mae_bounded_by_rms_and_order_free(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(1, 20))
            pairs = list(zip(rng.integers(0, 100, size=k), rng.integers(0, 100, size=k)))
            result = evaluate_dataset(pairs)
            assert result.mae <= result.mse + 1e-12
            shuffled = evaluate_dataset([pairs[i] for i in rng.permutation(k)])
            assert abs(shuffled.mae - result.mae) < 1e-12
            assert abs(shuffled.mse - result.mse) < 1e-12
            assert (result.mae == 0.0) == all(a == b for a, b in pairs)

    def test_per_image_table(self):
        result = evaluate_dataset([(3, 2)], ["img"])
        assert list(result.per_image.columns) == ["image_id", "gt_count", "pred_count"]
        assert result.per_image["image_id"].tolist() == ["img"]


class EvaluatePredictionsTests(TestCase):
    def test_joins_by_id(self):
        gt = [("b", PointSet([[0, 0], [1, 1]])), ("a", PointSet([[0, 0]]))]
        pred = [
            ("a", ProposalSet([[0, 0], [1, 1]], [0.9, 0.1])),
            ("b", ProposalSet([[0, 0]], [0.7])),
        ]
        result = evaluate_predictions(gt, pred)
        assert result.per_image["image_id"].tolist() == ["a", "b"]
        assert result.mae == 0.5

    def test_id_mismatch(self):
        with self.assertRaises(SchemaError):
            evaluate_predictions([("a", PointSet([[0, 0]]))], [("b", ProposalSet([[0, 0]], [0.9]))])
