"""Loss terms and their stage-specific compositions.

Each loss returns (scalar, gradient-w.r.t.-logits); the gradients are the
exact derivatives of the returned scalar (mean reduction included) and are
finite-difference checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingComponent
from .nn import sigmoid, softmax_last
from .validation import check_same_shape

LOG_CLAMP = 1e-12

ONE_STAGE = "one-stage"
STAGE_1 = "stage-1"
STAGE_2 = "stage-2"


@dataclass
class LossReport:
    focal: float
    ce: float
    iou: float
    proto: float
    small: float
    total: float
    stage: str

    def validate(self) -> None:
        """Every component must be finite and non-negative."""
        for key in ("focal", "ce", "iou", "proto", "small", "total"):
            v = getattr(self, key)
            if not np.isfinite(v):
                raise ValueError(f"loss component {key} is not finite: {v}")
            if v < 0:
                raise ValueError(f"loss component {key} is negative: {v}")

    def as_row(self) -> dict:
        return {
            "focal": self.focal, "ce": self.ce, "iou": self.iou,
            "proto": self.proto, "small": self.small, "total": self.total,
            "stage": self.stage,
        }


def focal_loss(logits: np.ndarray, targets: np.ndarray,
               gamma: float = 2.0, alpha: float = 0.25):
    """Mean of -alpha * (1 - p_t)^gamma * log(p_t) over all pixels.

    p_t is the predicted probability of the true class. Gradient w.r.t. the
    logits is returned alongside the scalar.
    """
    check_same_shape(logits, targets, "logits/targets")
    sign = np.where(targets > 0.5, 1.0, -1.0)
    pt = sigmoid(sign * logits)          # prob of the true class
    qt = sigmoid(-sign * logits)         # 1 - pt, computed stably
    logpt = np.log(np.maximum(pt, LOG_CLAMP))
    n = logits.size
    loss = float(-(alpha * np.power(qt, gamma) * logpt).sum() / n)
    grad = -alpha * sign * (np.power(qt, gamma + 1.0)
                            - gamma * pt * np.power(qt, gamma) * logpt) / n
    return loss, grad


def ce_loss(logits: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy on sigmoid probabilities (logit form)."""
    check_same_shape(logits, targets, "logits/targets")
    n = logits.size
    loss = float((np.logaddexp(0.0, logits) - logits * targets).sum() / n)
    grad = (sigmoid(logits) - targets) / n
    return loss, grad


def iou_loss(logits: np.ndarray, targets: np.ndarray):
    """Soft IoU: 1 - sum(p*y) / (sum(p) + sum(y) - sum(p*y)).

    An empty target with an all-zero prediction is defined as loss 0.
    """
    check_same_shape(logits, targets, "logits/targets")
    p = sigmoid(logits)
    inter = float((p * targets).sum())
    union = float(p.sum() + targets.sum() - inter)
    if union < LOG_CLAMP:
        return 0.0, np.zeros_like(logits)
    loss = 1.0 - inter / union
    dp = (inter * (1.0 - targets) - targets * union) / (union * union)
    return float(loss), dp * p * (1.0 - p)


def proto_loss(sim: np.ndarray, gt_grid: np.ndarray, per_class: int,
               temperature: float = 0.1):
    """Cross-entropy over per-class max-pooled prototype similarities.

    sim: (..., Hg, Wg, C*K) cosine similarities (c-major); gt_grid:
    (..., Hg, Wg) integer class labels. Class logits are the max over each
    class's K prototypes divided by the temperature. Returns
    (scalar, gradient w.r.t. sim).
    """
    if sim.shape[:-1] != gt_grid.shape:
        raise ValueError(
            f"similarity grid {sim.shape[:-1]} != label grid {gt_grid.shape}")
    j = sim.shape[-1]
    classes = j // per_class
    grouped = sim.reshape(sim.shape[:-1] + (classes, per_class))
    kstar = grouped.argmax(axis=-1)
    logits = np.take_along_axis(grouped, kstar[..., None], axis=-1)[..., 0]
    logits = logits / temperature
    probs = softmax_last(logits)
    n = gt_grid.size
    onehot = np.eye(classes, dtype=sim.dtype)[gt_grid]
    picked = np.take_along_axis(probs, gt_grid[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.maximum(picked, LOG_CLAMP)).sum() / n)
    dlogits = (probs - onehot) / (n * temperature)
    dgrouped = np.zeros_like(grouped)
    np.put_along_axis(dgrouped, kstar[..., None], dlogits[..., None], axis=-1)
    return loss, dgrouped.reshape(sim.shape)


def compose(stage: str, parts: dict, lam: float = 1.0) -> LossReport:
    """Stage-specific loss composition.

    - one-stage: total = (focal + ce + iou + proto) + lam * small
    - stage-1:   total = focal + ce + iou (no prototype term; the small
      model's own loss is tracked separately)
    - stage-2:   total = focal + ce + iou + proto
    """
    required = {
        ONE_STAGE: ("focal", "ce", "iou", "proto", "small"),
        STAGE_1: ("focal", "ce", "iou"),
        STAGE_2: ("focal", "ce", "iou", "proto"),
    }
    if stage not in required:
        raise ValueError(f"unknown stage {stage!r}")
    missing = [k for k in required[stage] if k not in parts]
    if missing:
        raise MissingComponent(f"stage {stage} needs loss parts {missing}")
    focal = float(parts["focal"])
    ce = float(parts["ce"])
    iou = float(parts["iou"])
    proto = float(parts.get("proto", 0.0))
    small = float(parts.get("small", 0.0))
    if stage == ONE_STAGE:
        total = focal + ce + iou + proto + lam * small
    elif stage == STAGE_1:
        proto = 0.0
        total = focal + ce + iou
    else:
        total = focal + ce + iou + proto
    return LossReport(focal=focal, ce=ce, iou=iou, proto=proto, small=small,
                      total=total, stage=stage)
