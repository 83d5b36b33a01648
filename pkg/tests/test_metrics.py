import numpy as np
import pytest

from puddleseg.errors import ShapeMismatch
from puddleseg.metrics import (ConfusionCounts, aggregate_counts,
                               confusion_counts, metrics, pr_curve)


def brute_counts(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


class TestConfusionCounts:
    def test_perfect_prediction(self):
        gt = np.zeros((4, 4))
        gt[:2, :2] = 1
        c = confusion_counts(gt, gt)
        assert (c.tp, c.fp, c.fn) == (4, 0, 0)
        assert c.total == 16

    def test_complement(self):
        gt = np.zeros((3, 3))
        gt[0] = 1
        c = confusion_counts(1 - gt, gt)
        assert c.tp == 0 and c.tn == 0
        assert c.fp == 6 and c.fn == 3

    def test_hand_case(self):
        pred = np.array([[1, 1], [1, 1], [0, 0]])
        gt = np.array([[1, 1], [1, 0], [1, 1]])
        c = confusion_counts(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (3, 1, 2, 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            confusion_counts(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pred = rng.random((6, 7)) > 0.5
            gt = rng.random((6, 7)) > 0.5
            c = confusion_counts(pred, gt)
            assert (c.tp, c.fp, c.fn, c.tn) == brute_counts(pred, gt)


class TestMetrics:
    def test_perfect(self):
        vals = metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=11))
        assert vals == (1.0, 1.0, 1.0, 1.0)

    def test_hand_case(self):
        vals = metrics(ConfusionCounts(tp=3, fp=1, fn=2, tn=0))
        assert vals.precision == pytest.approx(0.75)
        assert vals.recall == pytest.approx(0.6)
        assert vals.f1 == pytest.approx(2 / 3, abs=1e-4)
        assert vals.iou == pytest.approx(0.5)

    def test_zero_convention(self):
        vals = metrics(ConfusionCounts(tp=0, fp=4, fn=0, tn=12))
        assert vals == (0.0, 0.0, 0.0, 0.0)
        vals = metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=16))
        assert vals == (0.0, 0.0, 0.0, 0.0)

    def test_matches_brute_force_recompute(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            pred = rng.random((5, 5)) > 0.4
            gt = rng.random((5, 5)) > 0.6
            tp, fp, fn, tn = brute_counts(pred, gt)
            vals = metrics(confusion_counts(pred, gt))
            assert vals.precision == (tp / (tp + fp) if tp + fp else 0.0)
            assert vals.recall == (tp / (tp + fn) if tp + fn else 0.0)
            assert vals.iou == (tp / (tp + fp + fn) if tp + fp + fn else 0.0)


class TestPrCurve:
    def test_three_pixel_case(self):
        scores = np.array([[[0.9, 0.6, 0.2]]])
        gt = np.array([[[1.0, 1.0, 0.0]]])
        curve = pr_curve(scores, gt, num_thresholds=3)
        # thresholds 0, 0.5, 1
        t, p, r = curve.points[1]
        assert t == pytest.approx(0.5)
        assert p == pytest.approx(1.0)
        assert r == pytest.approx(1.0)

    def test_endpoints(self):
        rng = np.random.default_rng(2)
        scores = rng.random((3, 4, 4))
        gt = (rng.random((3, 4, 4)) > 0.5).astype(float)
        curve = pr_curve(scores, gt, num_thresholds=5)
        assert curve.points[0][2] == pytest.approx(1.0)  # threshold 0: all fg

    def test_recall_monotone_nonincreasing(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            scores = rng.random((2, 8, 8))
            gt = (rng.random((2, 8, 8)) > 0.5).astype(float)
            curve = pr_curve(scores, gt, num_thresholds=17)
            recalls = [r for _, _, r in curve.points]
            assert all(b <= a + 1e-12 for a, b in zip(recalls, recalls[1:]))

    def test_single_threshold_equals_metrics(self):
        rng = np.random.default_rng(4)
        scores = rng.random((3, 6, 6))
        gt = (rng.random((3, 6, 6)) > 0.5).astype(float)
        curve = pr_curve(scores, gt, num_thresholds=21)
        for t, p, r in curve.points:
            vals = metrics(aggregate_counts((scores >= t).astype(int), gt))
            assert p == pytest.approx(vals.precision, abs=1e-12)
            assert r == pytest.approx(vals.recall, abs=1e-12)

    def test_thresholds_strictly_increasing(self):
        curve = pr_curve(np.ones((1, 2, 2)), np.ones((1, 2, 2)), 9)
        ts = [t for t, _, _ in curve.points]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        assert ts[0] == 0.0 and ts[-1] == 1.0

    def test_validation(self):
        with pytest.raises(ShapeMismatch):
            pr_curve(np.ones((1, 2, 2)), np.ones((1, 3, 2)), 5)
        with pytest.raises(ValueError):
            pr_curve(np.ones((1, 2, 2)), np.ones((1, 2, 2)), 1)
