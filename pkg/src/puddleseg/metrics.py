"""Pixel-level binary segmentation metrics and PR curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatch
from .validation import check_same_shape


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class MetricValues(NamedTuple):
    precision: float
    recall: float
    f1: float
    iou: float


@dataclass
class PRCurve:
    points: list[tuple[float, float, float]]  # (threshold, precision, recall)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts for binary prediction vs ground truth."""
    check_same_shape(np.asarray(pred), np.asarray(gt), "pred/gt masks")
    p = np.asarray(pred) > 0.5
    g = np.asarray(gt) > 0.5
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def metrics(counts: ConfusionCounts) -> MetricValues:
    """Precision, recall, F1 and IoU with the 0/0 -> 0 convention."""
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    iou = _ratio(counts.tp, counts.tp + counts.fp + counts.fn)
    return MetricValues(precision=precision, recall=recall, f1=f1, iou=iou)


def pr_curve(scores: np.ndarray, gts: np.ndarray, num_thresholds: int = 11) -> PRCurve:
    """Micro-averaged precision/recall over uniformly spaced thresholds.

    scores: (n, H, W) in [0, 1]; gts: matching binary masks. Pixels are
    pooled across the whole set before computing each point, and a pixel
    counts as predicted-foreground when score >= threshold.
    """
    scores = np.asarray(scores)
    gts = np.asarray(gts)
    if scores.shape != gts.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs masks {gts.shape}")
    if scores.size == 0:
        raise ValueError("pr_curve needs at least one score/mask pair")
    if num_thresholds < 2:
        raise ValueError("need at least two thresholds")
    thresholds = np.linspace(0.0, 1.0, num_thresholds)
    flat_scores = scores.ravel()
    flat_gt = gts.ravel() > 0.5
    points = []
    for t in thresholds:
        pred = flat_scores >= t
        tp = int(np.count_nonzero(pred & flat_gt))
        fp = int(np.count_nonzero(pred & ~flat_gt))
        fn = int(np.count_nonzero(~pred & flat_gt))
        points.append((float(t), _ratio(tp, tp + fp), _ratio(tp, tp + fn)))
    return PRCurve(points=points)


def aggregate_counts(preds: np.ndarray, gts: np.ndarray) -> ConfusionCounts:
    """Dataset-pooled confusion counts over stacks of binary masks."""
    total = ConfusionCounts(0, 0, 0, 0)
    for p, g in zip(preds, gts):
        total = total + confusion_counts(p, g)
    return total
