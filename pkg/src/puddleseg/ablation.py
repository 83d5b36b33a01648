"""Grid harnesses over components and hyperparameters.

Every row trains a fresh model with the shared seed, evaluates it on the
test split, and lands in a CSV with the metric columns
(precision, recall, f1, iou). A failed row is recorded with its error and
the remaining rows still run.
"""

from __future__ import annotations

import csv
import dataclasses

from . import data
from .config import ONE_STAGE, TrainConfig
from .evaluate import evaluate_split
from .training import train

# cumulative component grid: baseline, +adapter, +spatial, +semantic,
# +style, +combiner
COMPONENT_ROWS = [
    {"use_he": False, "use_spatial": False, "use_semantic": False,
     "use_style": False, "use_dpc": False},
    {"use_he": True, "use_spatial": False, "use_semantic": False,
     "use_style": False, "use_dpc": False},
    {"use_he": True, "use_spatial": True, "use_semantic": False,
     "use_style": False, "use_dpc": False},
    {"use_he": True, "use_spatial": True, "use_semantic": True,
     "use_style": False, "use_dpc": False},
    {"use_he": True, "use_spatial": True, "use_semantic": True,
     "use_style": True, "use_dpc": False},
    {"use_he": True, "use_spatial": True, "use_semantic": True,
     "use_style": True, "use_dpc": True},
]

DEFAULT_VALUES = {
    "tau": (0.3, 0.4, 0.5, 0.6, 0.7),
    "lambda": (10.0, 1.0, 0.1, 0.01),
    "ratio": (0.25, 0.5, 1.0),
}

AXES = ("components", "tau", "lambda", "ratio")

METRIC_COLS = ("precision", "recall", "f1", "iou")


def _axis_configs(axis: str, base_cfg: TrainConfig, values):
    if axis == "components":
        for row in COMPONENT_ROWS:
            yield dict(row), dataclasses.replace(base_cfg, **row)
        return
    values = DEFAULT_VALUES[axis] if values is None else values
    for v in values:
        if axis == "tau":
            # tau only matters for point prompts
            yield {"tau": v}, dataclasses.replace(base_cfg, tau=float(v),
                                                  spatial_mode="point")
        elif axis == "lambda":
            # the small-model weight only exists in the one-stage total
            yield {"lambda": v}, dataclasses.replace(base_cfg, lam=float(v),
                                                     strategy=ONE_STAGE)
        elif axis == "ratio":
            yield {"ratio": v}, dataclasses.replace(base_cfg, ratio=float(v))
        else:
            raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def run_ablation(axis: str, base_cfg: TrainConfig, data_root,
                 out_csv=None, values=None, split: str = "test-all") -> list[dict]:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    train_idx = data.load_split(data_root, "train")
    test_idx = data.load_split(data_root, split)
    train_set = data.load_arrays(train_idx)
    test_images, test_masks = data.load_arrays(test_idx)
    rows = []
    for labels, cfg in _axis_configs(axis, base_cfg, values):
        row = dict(labels)
        try:
            result = train(cfg, train_set)
            prompted = cfg.strategy == ONE_STAGE or cfg.epochs_stage2 > 0
            _, vals = evaluate_split(result.pipeline, test_images, test_masks,
                                     prompted=prompted)
            row.update({
                "precision": vals.precision, "recall": vals.recall,
                "f1": vals.f1, "iou": vals.iou, "error": "",
            })
        except Exception as exc:  # keep going; the row records its failure
            row.update({m: "" for m in METRIC_COLS})
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if out_csv:
        write_rows_csv(rows, out_csv)
    return rows


def write_rows_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
