"""Input validation helpers shared by the estimators and metric kernels."""

from __future__ import annotations

import numpy as np


def check_image_batch(images, image_size=None, channels=3, name="images"):
    """Coerce to a float64 (N, H, W, C) array of values in [0, 1].

    Accepts a single (H, W, C) image or a batch. Raises ValueError on wrong
    rank, wrong channel count, a size mismatch, or out-of-range values.
    """
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected (N, H, W, C) or (H, W, C), got shape {arr.shape}")
    if arr.shape[-1] != channels:
        raise ValueError(f"{name}: expected {channels} channels, got {arr.shape[-1]}")
    if image_size is not None and (arr.shape[1] != image_size or arr.shape[2] != image_size):
        raise ValueError(
            f"{name}: expected {image_size}x{image_size} images, got {arr.shape[1]}x{arr.shape[2]}"
        )
    if arr.size and (arr.min() < -1e-6 or arr.max() > 1 + 1e-6):
        raise ValueError(f"{name}: pixel values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def check_same_shape(x, y, name_x="x", name_y="y"):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"{name_x} and {name_y} must have equal shapes, got {x.shape} vs {y.shape}")
    return x, y


def check_probability(p, name="probability"):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_fitted(estimator, attribute):
    """Raise if ``estimator`` has not been fitted (attribute is missing/None)."""
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() or load() first"
        )
