"""Batched inference and dataset-level evaluation."""

from __future__ import annotations

import time

import numpy as np

from .metrics import ConfusionCounts, MetricValues, aggregate_counts, metrics
from .pipeline import PREDICT_THRESHOLD, SegmentationPipeline


def predict_scores(pipeline: SegmentationPipeline, images: np.ndarray,
                   prompted: bool = True, batch: int = 8) -> np.ndarray:
    """Sigmoid score maps for a stack of images."""
    chunks = [pipeline.predict_probs(images[i:i + batch], prompted=prompted)
              for i in range(0, images.shape[0], batch)]
    return np.concatenate(chunks, axis=0)


def evaluate_split(pipeline: SegmentationPipeline, images: np.ndarray,
                   masks: np.ndarray, prompted: bool = True,
                   batch: int = 8) -> tuple[ConfusionCounts, MetricValues]:
    """Micro-pooled confusion counts and metrics at the 0.5 threshold."""
    scores = predict_scores(pipeline, images, prompted=prompted, batch=batch)
    preds = (scores >= PREDICT_THRESHOLD).astype(np.uint8)
    counts = aggregate_counts(preds, masks)
    return counts, metrics(counts)


def mean_inference_time(pipeline: SegmentationPipeline, images: np.ndarray,
                        prompted: bool = True, limit: int = 16) -> float:
    """Mean single-image predict() wall time in seconds."""
    sample = images[:limit]
    start = time.perf_counter()
    for img in sample:
        pipeline.predict(img[None], prompted=prompted)
    return (time.perf_counter() - start) / max(len(sample), 1)
