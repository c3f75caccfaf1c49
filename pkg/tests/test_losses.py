import math
from unittest import TestCase

import numpy as np

from crowd_points.assignment import match_points
from crowd_points.losses import (
    TTC,
    InvalidAlpha,
    LossVariant,
    evaluate_loss,
    finite_diff_gradient,
    hrc_count_loss,
    hsl1_regression_loss,
    relative_error,
    smooth_l1,
    ttc_total,
    wce_classification_loss,
)
from crowd_points.points import (
    InvalidInput,
    LengthMismatch,
    LossConfig,
    Matching,
    Point,
    PointSet,
    ProposalSet,
)


def random_instance(rng, n_max=5, extra_max=4):
    """GT points and proposals away from the kinks of the losses"""
    n = int(rng.integers(1, n_max + 1))
    m = n + int(rng.integers(0, extra_max + 1))
    gt = rng.uniform(0.0, 20.0, size=(n, 2))
    coords = rng.uniform(0.0, 20.0, size=(m, 2))
    # matched proposals either well inside or well outside the quadratic region
    near = rng.random(n) < 0.5
    offsets = np.where(near[:, None], rng.uniform(-0.3, 0.3, size=(n, 2)), rng.uniform(1.5, 4.0, size=(n, 2)))
    coords[:n] = gt + offsets
    conf = rng.uniform(0.05, 0.95, size=m)
    # keep the soft count away from N
    if abs(conf.sum() - n) < 0.2:
        conf[0] = conf[0] + 0.3 if conf[0] < 0.6 else conf[0] - 0.3
    pred = ProposalSet(coords, conf)
    matching = Matching.from_assignment(range(n), m)
    return PointSet(gt), pred, matching


class SmoothL1Tests(TestCase):
    def test_values(self):
        assert smooth_l1(Point(1.0, 1.0), Point(1.0, 1.0)) == 0.0
        assert abs(smooth_l1(Point(0.3, 0.2), Point(0.0, 0.0)) - 0.065) < 1e-15
        assert smooth_l1(Point(3.0, 4.0), Point(0.0, 0.0)) == 6.5


class RegressionTests(TestCase):
    def test_spot_values(self):
        gt = PointSet([[0.0, 0.0]])
        assert hsl1_regression_loss(gt, PointSet([[0.0, 0.0]])) == 0.0
        assert abs(hsl1_regression_loss(gt, [Point(0.3, 0.2)]) - math.log(1.065)) < 1e-9
        assert abs(hsl1_regression_loss(gt, [Point(3.0, 4.0)]) - math.log(7.5)) < 1e-9
        assert abs(math.log(1.065) - 0.062975) < 1e-6
        assert abs(math.log(7.5) - 2.014903) < 1e-6

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatch):
            hsl1_regression_loss(PointSet([[0, 0], [1, 1]]), [Point(0.0, 0.0)])

    def test_bounded_by_smooth_l1_and_translation_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            gt = rng.uniform(-50, 50, size=(n, 2))
            matched = gt + rng.normal(0, 2.0, size=(n, 2))
            value = hsl1_regression_loss(PointSet(gt), matched)
            mean_sl1 = np.mean([smooth_l1(Point(*a), Point(*b)) for a, b in zip(matched, gt)])
            assert 0.0 <= value < mean_sl1

            shift = rng.uniform(-100, 100, size=2)
            moved = hsl1_regression_loss(PointSet(gt + shift), matched + shift)
            assert abs(moved - value) < 1e-12 * max(1.0, value) + 1e-12


class ClassificationTests(TestCase):
    def test_symmetric_value(self):
        pred = ProposalSet([[0, 0], [1, 1]], [0.5, 0.5])
        value = wce_classification_loss(Matching((0,), (1,)), pred, 0.5)
        assert abs(value - math.log(2)) < 1e-9

    def test_perfect_limit(self):
        clamp = 1e-12
        pred = ProposalSet([[0, 0], [1, 1]], [1.0, 0.0])
        value = wce_classification_loss(Matching((0,), (1,)), pred, 0.5, clamp=clamp)
        assert 0.0 < value < 1e-11

    def test_literal_single(self):
        pred = ProposalSet([[0, 0]], [1.0])
        value = wce_classification_loss(Matching((0,), ()), pred, 0.5, mode="literal")
        assert abs(value - (-0.5 * math.log1p(-1e-7))) < 1e-12
        assert value > 0

    def test_invalid_alpha(self):
        pred = ProposalSet([[0, 0]], [0.5])
        with self.assertRaises(InvalidAlpha):
            wce_classification_loss(Matching((0,), ()), pred, 1.5)

    def test_monotone_in_confidences(self):
        rng = np.random.default_rng(2)
        matching = Matching((0, 1), (2, 3))
        for _ in range(200):
            conf = rng.uniform(0.1, 0.8, size=4)
            coords = np.zeros((4, 2))
            base = wce_classification_loss(matching, ProposalSet(coords, conf), 0.5)
            assert base >= 0
            up = conf.copy()
            up[int(rng.integers(0, 2))] += 0.1
            down = conf.copy()
            down[int(rng.integers(2, 4))] -= 0.05
            assert wce_classification_loss(matching, ProposalSet(coords, up), 0.5) < base
            assert wce_classification_loss(matching, ProposalSet(coords, down), 0.5) < base

    def test_gradient_at_half(self):
        pred = ProposalSet([[0, 0], [1, 1]], [0.5, 0.5])
        cfg = LossConfig(lambda2=0.0, lambda3=0.0)
        report = evaluate_loss(PointSet([[0, 0]]), pred, Matching((0,), (1,)), cfg)
        assert abs(report.grad_conf[0] - (-0.5 / 0.5)) < 1e-12


class CountTests(TestCase):
    def test_spot_values(self):
        assert hrc_count_loss(100, 100, 1e-8) == 0.0
        assert abs(hrc_count_loss(100, 110, 1e-12) - 10 * math.log(1.1)) < 1e-9
        assert abs(hrc_count_loss(100, 90, 1e-12) - 10 * math.log(1.1)) < 1e-9

    def test_symmetric_and_increasing(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 200))
            k = int(rng.integers(0, n + 1))
            up, down = hrc_count_loss(n, n + k, 1e-8), hrc_count_loss(n, n - k, 1e-8)
            assert up == down
            assert (up == 0.0) == (k == 0.0)
            assert hrc_count_loss(n, n + k + 0.5, 1e-8) > up

    def test_rejects_negative_counts(self):
        with self.assertRaises(InvalidInput):
            hrc_count_loss(-1, 0, 1e-8)


class TotalTests(TestCase):
    def test_perfect_prediction(self):
        cfg = LossConfig()
        gt = PointSet([[3, 4], [10, 10]])
        pred = ProposalSet([[3, 4], [10, 10]], [1.0, 1.0])
        report = ttc_total(gt, pred, match_points(gt, pred, cfg), cfg)
        assert report.l_reg == 0.0
        assert report.total < 1e-6
        assert np.all(report.grad_coords == 0.0)

    def test_combined_spot_value(self):
        # one matched pair at d=(0.3, 0.2) with t=0.5, plus an unmatched t=0.5 so the soft count is N
        cfg = LossConfig(hrc_count_mode="hard", threshold=0.6)
        gt = PointSet([[0.0, 0.0]])
        pred = ProposalSet([[0.3, 0.2], [50.0, 50.0]], [0.5, 0.5])
        report = ttc_total(gt, pred, Matching((0,), (1,)), cfg)
        assert abs(report.l_cou - hrc_count_loss(1, 0, cfg.epsilon)) < 1e-12

        cfg = LossConfig()
        report = ttc_total(gt, pred, Matching((0,), (1,)), cfg)
        assert report.l_cou == 0.0
        assert abs(report.total - (math.log(2) + math.log(1.065))) < 1e-9
        assert abs(report.total - 0.756122) < 1e-6

    def test_linear_in_lambdas(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            gt, pred, matching = random_instance(rng)
            lambdas = rng.uniform(0.0, 3.0, size=3)
            cfg = LossConfig(lambda1=lambdas[0], lambda2=lambdas[1], lambda3=lambdas[2])
            report = ttc_total(gt, pred, matching, cfg)
            expected = lambdas[0] * report.l_cls + lambdas[1] * report.l_reg + lambdas[2] * report.l_cou
            assert abs(report.total - expected) <= 1e-12 * max(1.0, abs(expected))

            scaled_cfg = LossConfig(lambda1=lambdas[0], lambda2=10 * lambdas[1], lambda3=lambdas[2])
            scaled = ttc_total(gt, pred, matching, scaled_cfg)
            assert scaled.l_reg == report.l_reg
            gap = scaled.total - report.total
            assert abs(gap - 9 * lambdas[1] * report.l_reg) <= 1e-9 * max(1.0, abs(gap))

    def test_unmatched_coordinates_have_no_gradient(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            gt, pred, matching = random_instance(rng)
            report = ttc_total(gt, pred, matching, LossConfig())
            assert np.all(report.grad_coords[list(matching.unmatched)] == 0.0)

    def test_hard_count_has_no_confidence_slope(self):
        rng = np.random.default_rng(9)
        gt, pred, matching = random_instance(rng)
        report = ttc_total(gt, pred, matching, LossConfig(hrc_count_mode="hard"))
        assert np.all(report.grad_conf_cou == 0.0)

    def test_variant_labels(self):
        assert TTC.label == "HSL1+WCE+HRC"
        assert LossVariant("mse", "ce", "none").label == "MSE+CE+-"
        with self.assertRaises(InvalidInput):
            LossVariant("l2", "ce", "none")


class GradientTests(TestCase):
    def check(self, f, analytic, pred):
        numeric_coords, numeric_conf = finite_diff_gradient(f, pred, h=1e-6)
        assert relative_error(analytic[0], numeric_coords) < 1e-5
        assert relative_error(analytic[1], numeric_conf) < 1e-5

    def test_constant_function(self):
        pred = ProposalSet([[1, 2], [3, 4]], [0.3, 0.6])
        coords, conf = finite_diff_gradient(lambda p: 3.0, pred)
        assert np.all(coords == 0.0) and np.all(conf == 0.0)

    def test_components_and_total(self):
        rng = np.random.default_rng(10)
        variants = [
            (LossVariant("hsl1", "wce", "none"), LossConfig(lambda1=0.0, lambda3=0.0)),
            (LossVariant("hsl1", "wce", "none"), LossConfig(lambda2=0.0, lambda3=0.0)),
            (LossVariant("hsl1", "wce", "none"), LossConfig(lambda2=0.0, lambda3=0.0, wce_mode="literal")),
            (LossVariant("hsl1", "wce", "hrc"), LossConfig(lambda1=0.0, lambda2=0.0)),
            (TTC, LossConfig(lambda1=0.7, lambda2=1.3, lambda3=0.4, alpha=0.3)),
        ]
        for case in range(100):
            gt, pred, matching = random_instance(rng)
            variant, cfg = variants[case % len(variants)]

            def f(p):
                return evaluate_loss(gt, p, matching, cfg, variant).total

            report = evaluate_loss(gt, pred, matching, cfg, variant)
            self.check(f, (report.grad_coords, report.grad_conf), pred)

    def test_baseline_variants(self):
        rng = np.random.default_rng(12)
        for case in range(40):
            gt, pred, matching = random_instance(rng)
            variant = [LossVariant("mse", "ce", "mae"), LossVariant("smooth_l1", "ce", "hrc")][case % 2]
            cfg = LossConfig()

            def f(p):
                return evaluate_loss(gt, p, matching, cfg, variant).total

            report = evaluate_loss(gt, pred, matching, cfg, variant)
            self.check(f, (report.grad_coords, report.grad_conf), pred)
