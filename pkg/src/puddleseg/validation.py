"""Input validation helpers.

All public entry points funnel their array arguments through these checks so
that shape/range mistakes fail early with a readable message instead of
surfacing as numerics deep inside a forward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate a single grayscale image: 2-D, finite, values in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"{name} must be at least 2x2, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"{name} values must lie in [0, 1], got range "
            f"[{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_mask_probs(mask, name: str = "mask") -> np.ndarray:
    """Validate a per-pixel probability mask (same contract as an image)."""
    return check_image(mask, name=name)


def check_field(arr, name: str = "field") -> np.ndarray:
    """Validate a general 2-D real field: finite values, at least 2x2.

    Spectral operations accept unbounded fields (e.g. pure tones, filter
    outputs); the [0, 1] range contract applies only at image boundaries.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"{name} must be at least 2x2, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_image_stack(X, side: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a stack of images shaped (n, H, W); returns float64 array.

    A single 2-D image is promoted to a stack of one.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (n, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if side is not None and arr.shape[1:] != (side, side):
        raise ShapeMismatch(
            f"{name} images must be {side}x{side}, got {arr.shape[1:]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_binary_stack(y, like: np.ndarray | None = None, name: str = "y") -> np.ndarray:
    """Validate a stack of binary masks; returns a float64 array of {0, 1}."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (n, H, W), got {arr.shape}")
    if like is not None and arr.shape != like.shape:
        raise ShapeMismatch(
            f"{name} shape {arr.shape} does not match images {like.shape}"
        )
    uniq = np.unique(arr)
    if not np.all(np.isin(uniq, (0.0, 1.0))):
        raise ValueError(f"{name} must be binary (0/1), got values {uniq[:5]}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} must have equal shapes, got {a.shape} vs {b.shape}")
