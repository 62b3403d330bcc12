"""Orthographic projection of planar feature maps onto the visible hemisphere.

A hemisphere grid point (x, y, z), z >= 0, reads the feature map at image
coordinates (x, y), the plane [-1, 1]^2 inscribing the unit disk. Samples
are bilinearly interpolated, tapered toward the disk edge, and a random
subset of grid points is kept per pass (grid dropout). The retained
samples are converted to band-limited coefficients by ridge least squares;
with ~20 scattered points a quadrature rule would be meaningless.

An alternative "fourier" variant maps the flattened feature map to
coefficients through a plain trainable linear layer, per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import harmonics as hm
from .grids import S2Grid, healpix_s2, hemisphere

__all__ = [
    "ProjectionConfig",
    "Projector",
    "project",
    "taper_weight",
    "dropout_mask",
    "bilinear_sample",
    "bilinear_scatter",
]

RIDGE = 1e-6


@dataclass
class ProjectionConfig:
    recursion: int = 2
    n_keep: int = 20
    band_limit: int = 6
    rho0: float = 0.8
    eval_mode: bool = False
    eval_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho0 < 1.0:
            raise ValueError("taper knee rho0 must lie strictly inside (0, 1)")
        if self.n_keep < 1:
            raise ValueError("must keep at least one grid point")


def taper_weight(points: np.ndarray, rho0: float = 0.8) -> np.ndarray:
    """Edge taper for hemisphere points: 1 inside radius rho0, cosine
    half-window down to 0 at the disk edge rho = 1."""
    points = np.asarray(points, dtype=np.float64)
    rho = np.hypot(points[..., 0], points[..., 1])
    w = 0.5 * (1.0 + np.cos(np.pi * (rho - rho0) / (1.0 - rho0)))
    return np.where(rho <= rho0, 1.0, np.where(rho >= 1.0, 0.0, w))


def dropout_mask(rng: np.random.Generator, n_total: int, n_keep: int) -> np.ndarray:
    """Uniform without-replacement subset of grid indices, sorted."""
    if n_keep > n_total:
        raise ValueError(f"cannot keep {n_keep} of {n_total} grid points")
    return np.sort(rng.choice(n_total, size=n_keep, replace=False))


def bilinear_sample(fm: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Sample (..., C, H, W) maps at fractional pixel coords, batched.

    Returns (values, cache) with values (..., C, n). Coordinates are
    clamped to the border.
    """
    H, W = fm.shape[-2:]
    px = np.clip(px, 0.0, W - 1.0)
    py = np.clip(py, 0.0, H - 1.0)
    x0 = np.minimum(px.astype(np.intp), W - 2)
    y0 = np.minimum(py.astype(np.intp), H - 2)
    fx = px - x0
    fy = py - y0
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    vals = (
        fm[..., y0, x0] * w00
        + fm[..., y0, x0 + 1] * w01
        + fm[..., y0 + 1, x0] * w10
        + fm[..., y0 + 1, x0 + 1] * w11
    )
    cache = (fm.shape, x0, y0, (w00, w01, w10, w11))
    return vals, cache


def bilinear_scatter(dvals: np.ndarray, cache) -> np.ndarray:
    """Adjoint of bilinear_sample: spread (..., C, n) grads back to pixels."""
    shape, x0, y0, (w00, w01, w10, w11) = cache
    H, W = shape[-2:]
    dfm = np.zeros(dvals.shape[:-1] + (H * W,), dtype=dvals.dtype)
    flat00 = y0 * W + x0
    np.add.at(dfm, (..., flat00), dvals * w00)
    np.add.at(dfm, (..., flat00 + 1), dvals * w01)
    np.add.at(dfm, (..., flat00 + W), dvals * w10)
    np.add.at(dfm, (..., flat00 + W + 1), dvals * w11)
    return dfm.reshape(dvals.shape[:-1] + (H, W))


class Projector:
    """Precomputed geometry for one (recursion, band limit, taper) choice.

    Holds the hemisphere grid, the per-point taper, and the full harmonic
    design matrix; per-mask ridge solves use the dual (n_keep x n_keep)
    normal equations, exact via the push-through identity and far better
    conditioned than the primal when n_keep < n_coeffs.
    """

    def __init__(self, config: ProjectionConfig):
        self.config = config
        self.grid: S2Grid = hemisphere(healpix_s2(config.recursion))
        if config.n_keep > len(self.grid):
            raise ValueError(
                f"n_keep {config.n_keep} exceeds hemisphere grid size {len(self.grid)}"
            )
        self.taper = taper_weight(self.grid.points, config.rho0)
        self.basis = hm.sh_matrix(self.grid.points, config.band_limit)
        self._eval_mask = dropout_mask(
            np.random.default_rng(config.eval_seed), len(self.grid), config.n_keep
        )

    def pixel_coords(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Fractional pixel coordinates of every hemisphere point."""
        x, y = self.grid.points[:, 0], self.grid.points[:, 1]
        return (x + 1.0) / 2.0 * (width - 1), (y + 1.0) / 2.0 * (height - 1)

    def sample_mask(self, rng: np.random.Generator | None) -> np.ndarray:
        if self.config.eval_mode or rng is None:
            return self._eval_mask
        return dropout_mask(rng, len(self.grid), self.config.n_keep)

    def solve_coeffs(self, mask: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Ridge fit: (..., n_keep) tapered samples -> (..., n_coeffs)."""
        A = self.basis[mask]
        K = A @ A.T + RIDGE * np.eye(len(mask))
        dual = np.linalg.solve(K, values[..., None]).squeeze(-1)
        return dual @ A

    def fit_matrix(self, mask: np.ndarray) -> np.ndarray:
        """(n_keep, n_coeffs) map M with coeffs = values @ M."""
        A = self.basis[mask]
        K = A @ A.T + RIDGE * np.eye(len(mask))
        return np.linalg.solve(K, A)

    def forward(self, fm: np.ndarray, masks: np.ndarray):
        """Project a batch: (B, C, H, W) + (B, n_keep) masks -> (B, C, d).

        Returns (coeffs, cache) for the reverse pass.
        """
        B, C, H, W = fm.shape
        px, py = self.pixel_coords(W, H)
        raw, bil_cache = bilinear_sample(fm, px, py)  # (B, C, n_grid)
        fit = np.stack([self.fit_matrix(m) for m in masks])  # (B, k, d)
        kept = np.take_along_axis(raw, masks[:, None, :], axis=2)
        kept = kept * self.taper[masks][:, None, :]
        coeffs = np.einsum("bck,bkd->bcd", kept, fit)
        cache = (masks, fit, bil_cache)
        return coeffs, cache

    def backward(self, dcoeffs: np.ndarray, cache) -> np.ndarray:
        """Reverse of forward: (B, C, d) -> (B, C, H, W)."""
        masks, fit, bil_cache = cache
        B, C, _ = dcoeffs.shape
        dkept = np.einsum("bcd,bkd->bck", dcoeffs, fit)
        dkept = dkept * self.taper[masks][:, None, :]
        draw = np.zeros((B, C, len(self.grid)), dtype=dcoeffs.dtype)
        idx = np.arange(B)[:, None, None]
        cidx = np.arange(C)[None, :, None]
        np.add.at(draw, (idx, cidx, masks[:, None, :]), dkept)
        return bilinear_scatter(draw, bil_cache)


_projector_cache: dict[tuple, Projector] = {}


def get_projector(config: ProjectionConfig) -> Projector:
    key = (
        config.recursion,
        config.n_keep,
        config.band_limit,
        config.rho0,
        config.eval_mode,
        config.eval_seed,
    )
    if key not in _projector_cache:
        _projector_cache[key] = Projector(config)
    return _projector_cache[key]


def project(
    fm: np.ndarray, config: ProjectionConfig, rng: np.random.Generator | None = None
) -> hm.S2Coeffs:
    """Project one (C, H, W) feature map to sphere coefficients."""
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim != 3:
        raise ValueError("expected a (channels, height, width) feature map")
    if fm.shape[-1] < 2 or fm.shape[-2] < 2:
        raise ValueError("feature map must be at least 2x2")
    proj = get_projector(config)
    mask = proj.sample_mask(rng)
    coeffs, _ = proj.forward(fm[None], mask[None])
    return hm.S2Coeffs(coeffs[0], config.band_limit)
