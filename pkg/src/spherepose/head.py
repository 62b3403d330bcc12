"""Categorical pose distributions from a single-channel SO(3) signal.

The signal is evaluated at every rotation of an equal-volume grid; the
values are softmaxed into cell probabilities. Densities divide by the
cell volume pi^2/N, so a uniform distribution has log density -ln(pi^2)
regardless of grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import harmonics as hm
from . import rotations as rot
from .grids import SO3Grid, nearest_index

__all__ = [
    "PoseDistribution",
    "query_logits",
    "softmax_distribution",
    "cross_entropy",
    "log_likelihood",
    "argmax_rotation",
    "grid_basis",
]

PROB_FLOOR = 1e-12
CHUNK = 1 << 16


_basis_cache: dict[tuple, np.ndarray] = {}


def grid_basis(grid: SO3Grid, band_limit: int, dtype=np.float64) -> np.ndarray:
    """(len(grid), n_so3_coeffs) evaluation matrix, cached.

    Only materialized for grids small enough to hold; query_logits streams
    larger grids in chunks instead.
    """
    key = (grid.recursion, len(grid), band_limit, np.dtype(dtype).str)
    if key not in _basis_cache:
        a, b, g = grid.alpha, grid.beta, grid.gamma
        _basis_cache[key] = hm.so3_basis(a, b, g, band_limit, dtype=dtype)
    return _basis_cache[key]


def query_logits(signal: hm.SO3Coeffs, grid: SO3Grid) -> np.ndarray:
    """Evaluate the signal at every grid rotation."""
    if signal.channels != 1:
        raise ValueError("query_logits expects a single-channel signal")
    if len(grid) <= 1 << 17:
        return signal.data[0] @ grid_basis(grid, signal.band_limit).T
    out = np.empty(len(grid))
    a, b, g = grid.alpha, grid.beta, grid.gamma
    for lo in range(0, len(grid), CHUNK):
        hi = min(lo + CHUNK, len(grid))
        B = hm.so3_basis(a[lo:hi], b[lo:hi], g[lo:hi], signal.band_limit)
        out[lo:hi] = B @ signal.data[0]
    return out


@dataclass
class PoseDistribution:
    grid: SO3Grid
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != (len(self.grid),):
            raise ValueError("probability vector does not match the grid")


def softmax_distribution(logits: np.ndarray, grid: SO3Grid) -> PoseDistribution:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    e = np.exp(logits - logits.max())
    return PoseDistribution(grid, e / e.sum())


def cross_entropy(
    logits: np.ndarray, gt: np.ndarray, grid: SO3Grid
) -> tuple[float, np.ndarray]:
    """Negative log softmax probability of the cell nearest the label.

    Returns (loss, dloss/dlogits); the gradient is softmax minus one-hot.
    """
    target = int(nearest_index(grid, np.asarray(gt, dtype=np.float64))[()])
    shifted = logits - logits.max()
    logZ = np.log(np.sum(np.exp(shifted)))
    loss = logZ - shifted[target]
    grad = np.exp(shifted - logZ)
    grad[target] -= 1.0
    return float(loss), grad


def cross_entropy_batch(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise cross entropy against precomputed target indices."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(len(logits))
    losses = logZ - shifted[rows, targets]
    grads = np.exp(shifted - logZ[:, None])
    grads[rows, targets] -= 1.0
    return losses, grads


def log_likelihood(dist: PoseDistribution, r: np.ndarray) -> float | np.ndarray:
    """Log density (nats) the distribution assigns to rotation(s) r.

    Cell probability over cell volume pi^2/N, floored to avoid -inf.
    """
    idx = nearest_index(dist.grid, np.asarray(r, dtype=np.float64))
    p = np.maximum(dist.probs[idx], PROB_FLOOR)
    out = np.log(p * (len(dist.grid) / np.pi**2))
    return float(out) if out.ndim == 0 else out


def argmax_rotation(dist: PoseDistribution) -> np.ndarray:
    """Grid rotation with the highest probability (first index on ties)."""
    return dist.grid.quats[int(np.argmax(dist.probs))]
