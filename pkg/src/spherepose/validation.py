"""Input checking shared by the estimator, CLI, and file loaders."""

from __future__ import annotations

import numpy as np

__all__ = ["check_images", "check_rotations"]


def check_images(X, image_size: int | None = None) -> np.ndarray:
    """Validate an (n, 3, s, s) image batch and return it as float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 3 or X.shape[2] != X.shape[3]:
        raise ValueError(
            f"images must have shape (n, 3, s, s), got {X.shape}"
        )
    if image_size is not None and X.shape[2] != image_size:
        raise ValueError(
            f"expected {image_size}x{image_size} images, got {X.shape[2]}x{X.shape[3]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


def check_rotations(y, *, atol: float = 1e-3) -> np.ndarray:
    """Validate unit quaternions (n, 4) or (4,); returns them normalized."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.ndim != 2 or y.shape[1] != 4:
        raise ValueError(f"rotations must have shape (n, 4), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("rotations contain non-finite values")
    norms = np.linalg.norm(y, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"quaternions must be unit length (worst |n-1| = {worst:.2e})")
    y = y / norms[:, None]
    return y[0] if single else y
