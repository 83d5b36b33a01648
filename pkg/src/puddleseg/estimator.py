"""Scikit-learn style wrapper around the training harness.

`PromptedSegmenter` is a BaseEstimator: constructor arguments are stored
verbatim (so get_params/set_params/clone work), `fit` trains the full
pipeline on (images, masks) stacks, and `predict` returns binary masks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .config import TrainConfig
from .evaluate import evaluate_split, predict_scores
from .pipeline import PREDICT_THRESHOLD
from .training import train
from .validation import check_binary_stack, check_image_stack

_CONFIG_FIELDS = (
    "strategy", "epochs_stage1", "epochs_stage2", "batch_size", "lr", "lam",
    "tau", "grid_size", "spatial_mode", "seed", "ratio", "image_side",
    "encoder_depth", "embed_dim", "patch_size", "num_prototypes_per_class",
)


class PromptedSegmenter(BaseEstimator):
    """Prompt-conditioned binary segmenter co-trained with a small CNN.

    Parameters mirror the training config; see TrainConfig for semantics.
    `score` returns the micro-pooled IoU of the predictions at the 0.5
    threshold.
    """

    def __init__(self, strategy: str = "two-stage", epochs_stage1: int = 40,
                 epochs_stage2: int = 20, batch_size: int = 4, lr: float = 5e-4,
                 lam: float = 1.0, tau: float = 0.4, grid_size: int = 4,
                 spatial_mode: str = "mask", seed: int = 42, ratio: float = 1.0,
                 image_side: int = 64, encoder_depth: int = 4,
                 embed_dim: int = 32, patch_size: int = 8,
                 num_prototypes_per_class: int = 2):
        self.strategy = strategy
        self.epochs_stage1 = epochs_stage1
        self.epochs_stage2 = epochs_stage2
        self.batch_size = batch_size
        self.lr = lr
        self.lam = lam
        self.tau = tau
        self.grid_size = grid_size
        self.spatial_mode = spatial_mode
        self.seed = seed
        self.ratio = ratio
        self.image_side = image_side
        self.encoder_depth = encoder_depth
        self.embed_dim = embed_dim
        self.patch_size = patch_size
        self.num_prototypes_per_class = num_prototypes_per_class

    def build_config(self) -> TrainConfig:
        cfg = TrainConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS})
        cfg.validate()
        return cfg

    def fit(self, X, y) -> "PromptedSegmenter":
        X = check_image_stack(X, side=self.image_side)
        y = check_binary_stack(y, like=X)
        cfg = self.build_config()
        result = train(cfg, (X, y))
        self.pipeline_ = result.pipeline
        self.config_ = cfg
        self.log_ = result.log_rows
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("this PromptedSegmenter instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel foreground probabilities, shaped like the input stack."""
        self._check_fitted()
        X = check_image_stack(X, side=self.image_side)
        return predict_scores(self.pipeline_, X, prompted=True)

    def predict(self, X) -> np.ndarray:
        """Binary masks (uint8) at the 0.5 probability threshold."""
        return (self.predict_proba(X) >= PREDICT_THRESHOLD).astype(np.uint8)

    def score(self, X, y) -> float:
        """Micro-pooled IoU over the given set."""
        self._check_fitted()
        X = check_image_stack(X, side=self.image_side)
        y = check_binary_stack(y, like=X)
        _, vals = evaluate_split(self.pipeline_, X, y, prompted=True)
        return vals.iou
