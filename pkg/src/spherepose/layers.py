"""Group-convolution layers on S^2 and SO(3), the spatial ReLU, and filters.

Both convolutions are correlations [F * Psi](g) = integral of F(u) times
Psi(g^-1 u), evaluated entirely in the Fourier domain:

* S^2: the output lives on SO(3); degree block = outer(signal_l, filter_l),
  summed over input channels (no constant with this basis normalization).
* SO(3): degree block = pi^2/(2l+1) * signal_l @ filter_l^T, summed over
  input channels. A Dirac filter at the identity has blocks
  (2l+1)/pi^2 * I and reproduces the input exactly.

Both are left-equivariant: rotating the input signal rotates the output,
coefficient blocks transforming by wigner_D on the left.

Filters are parameterized either directly by Fourier coefficients or by
spatial tap weights; a tap at location u contributes weight * basis(u) to
the coefficients (the filter is a weighted sum of Dirac bumps, matching the
discrete sum the group correlation reduces to on a point set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import harmonics as hm
from . import rotations as rot
from .grids import S2Grid, SO3Grid, SO3Quadrature

__all__ = [
    "S2Filter",
    "SO3Filter",
    "s2_conv",
    "so3_conv",
    "spatial_relu",
    "rotate_signal",
    "s2_conv_arrays",
    "so3_conv_arrays",
    "relu_tables",
]


# ---------------------------------------------------------------------------
# filters


@dataclass
class S2Filter:
    """Learned sphere filter, one per (input channel, output channel) pair.

    mode "fourier" stores coefficients directly (the default; global
    support comes for free). mode "spatial" stores tap weights on a full
    equal-area grid.
    """

    mode: str
    weights: np.ndarray  # (c_in, c_out, (L+1)^2) or (c_in, c_out, n_grid)
    band_limit: int
    grid: S2Grid | None = None

    def __post_init__(self):
        if self.mode not in ("fourier", "spatial"):
            raise ValueError(f"unknown S2Filter mode {self.mode!r}")
        if self.mode == "spatial" and self.grid is None:
            raise ValueError("spatial S2Filter needs its tap grid")

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        band_limit: int,
        mode: str = "fourier",
        grid: S2Grid | None = None,
    ) -> "S2Filter":
        if mode == "fourier":
            dim = hm.n_s2_coeffs(band_limit)
        else:
            dim = len(grid)
        w = rng.standard_normal((c_in, c_out, dim)) / np.sqrt(c_in * dim)
        return cls(mode, w, band_limit, grid)

    def coefficients(self) -> np.ndarray:
        """(c_in, c_out, (L+1)^2) Fourier view of the filter."""
        if self.mode == "fourier":
            return self.weights
        return self.weights @ sh_basis_cached(self.grid, self.band_limit)

    def coefficients_backward(self, dcoeffs: np.ndarray) -> np.ndarray:
        """Gradient of a loss w.r.t. weights, given it w.r.t. coefficients."""
        if self.mode == "fourier":
            return dcoeffs
        return dcoeffs @ sh_basis_cached(self.grid, self.band_limit).T


_sh_basis_cache: dict[tuple[int, int, int], np.ndarray] = {}


def sh_basis_cached(grid: S2Grid, L: int) -> np.ndarray:
    key = (id(grid), len(grid), L)
    if key not in _sh_basis_cache:
        _sh_basis_cache[key] = hm.sh_matrix(grid.points, L)
    return _sh_basis_cache[key]


@dataclass
class SO3Filter:
    """Locally supported rotation-group filter.

    Tap weights live at the grid rotations within support_angle of the
    identity; everything outside the support is identically zero. The
    Fourier view scales each tap's basis row by (2l+1)/pi^2, the Dirac
    expansion, so a single unit tap at the identity is the exact
    convolution identity.
    """

    values: np.ndarray  # (c_in, c_out, n_support)
    support_quats: np.ndarray
    support_angle: float
    band_limit: int
    _basis_cache: list = field(default_factory=list, repr=False)

    @classmethod
    def support_of(cls, grid: SO3Grid, support_angle: float) -> np.ndarray:
        """Indices of grid rotations within support_angle of the identity."""
        angles = 2.0 * np.arccos(np.clip(np.abs(grid.quats[:, 0]), -1.0, 1.0))
        return np.nonzero(angles <= support_angle + 1e-12)[0]

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        band_limit: int,
        grid: SO3Grid,
        support_angle: float = np.radians(22.5),
    ) -> "SO3Filter":
        idx = cls.support_of(grid, support_angle)
        if len(idx) == 0:
            raise ValueError(
                f"no grid rotations within {np.degrees(support_angle):.1f} deg "
                "of the identity; use a finer grid for the filter taps"
            )
        vals = rng.standard_normal((c_in, c_out, len(idx))) / np.sqrt(c_in * len(idx))
        return cls(vals, grid.quats[idx], support_angle, band_limit)

    @property
    def n_support(self) -> int:
        return self.support_quats.shape[0]

    def _dirac_basis(self) -> np.ndarray:
        """(n_support, n_so3_coeffs) rows: (2l+1)/pi^2 * basis at each tap."""
        if not self._basis_cache:
            a, b, g = rot.to_zyz(self.support_quats)
            B = hm.so3_basis(a, b, g, self.band_limit)
            scale = np.empty(hm.n_so3_coeffs(self.band_limit))
            for l, blk in enumerate(hm.so3_block_slices(self.band_limit)):
                scale[blk] = (2 * l + 1) / np.pi**2
            self._basis_cache.append(B * scale)
        return self._basis_cache[0]

    def coefficients(self) -> np.ndarray:
        """(c_in, c_out, n_so3_coeffs) Fourier view of the filter."""
        return self.values @ self._dirac_basis()

    def coefficients_backward(self, dcoeffs: np.ndarray) -> np.ndarray:
        return dcoeffs @ self._dirac_basis().T


# ---------------------------------------------------------------------------
# convolutions (array cores + typed wrappers)


def s2_conv_arrays(sig: np.ndarray, psi: np.ndarray, L: int) -> np.ndarray:
    """(batch, c_in, (L+1)^2) x (c_in, c_out, (L+1)^2) -> (batch, c_out, T_L)."""
    batch, _, _ = sig.shape
    c_out = psi.shape[1]
    out = np.empty((batch, c_out, hm.n_so3_coeffs(L)), dtype=sig.dtype)
    for l, blk in enumerate(hm.so3_block_slices(L)):
        s = sig[:, :, l * l : (l + 1) ** 2]
        p = psi[:, :, l * l : (l + 1) ** 2]
        out[:, :, blk] = np.einsum("bcm,con->bomn", s, p).reshape(batch, c_out, -1)
    return out


def s2_conv_backward_arrays(
    dout: np.ndarray, sig: np.ndarray, psi: np.ndarray, L: int
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse mode of s2_conv_arrays: returns (dsig, dpsi)."""
    batch, c_in, _ = sig.shape
    c_out = psi.shape[1]
    dsig = np.empty_like(sig)
    dpsi = np.empty_like(psi)
    for l, blk in enumerate(hm.so3_block_slices(L)):
        n = 2 * l + 1
        d = dout[:, :, blk].reshape(batch, c_out, n, n)
        s = sig[:, :, l * l : (l + 1) ** 2]
        p = psi[:, :, l * l : (l + 1) ** 2]
        dsig[:, :, l * l : (l + 1) ** 2] = np.einsum("bomn,con->bcm", d, p)
        dpsi[:, :, l * l : (l + 1) ** 2] = np.einsum("bomn,bcm->con", d, s)
    return dsig, dpsi


def so3_conv_arrays(sig: np.ndarray, psi: np.ndarray, L: int) -> np.ndarray:
    """(batch, c_in, T_L) x (c_in, c_out, T_L) -> (batch, c_out, T_L)."""
    batch = sig.shape[0]
    c_out = psi.shape[1]
    out = np.empty((batch, c_out, hm.n_so3_coeffs(L)), dtype=sig.dtype)
    for l, blk in enumerate(hm.so3_block_slices(L)):
        n = 2 * l + 1
        s = sig[:, :, blk].reshape(batch, -1, n, n)
        p = psi[:, :, blk].reshape(-1, c_out, n, n)
        scale = np.pi**2 / (2 * l + 1)
        out[:, :, blk] = (scale * np.einsum("bcmp,conp->bomn", s, p)).reshape(
            batch, c_out, -1
        )
    return out


def so3_conv_backward_arrays(
    dout: np.ndarray, sig: np.ndarray, psi: np.ndarray, L: int
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse mode of so3_conv_arrays: returns (dsig, dpsi)."""
    batch = sig.shape[0]
    c_out = psi.shape[1]
    dsig = np.empty_like(sig)
    dpsi = np.empty_like(psi)
    for l, blk in enumerate(hm.so3_block_slices(L)):
        n = 2 * l + 1
        d = dout[:, :, blk].reshape(batch, c_out, n, n)
        s = sig[:, :, blk].reshape(batch, -1, n, n)
        p = psi[:, :, blk].reshape(-1, c_out, n, n)
        scale = np.pi**2 / (2 * l + 1)
        dsig[:, :, blk] = (scale * np.einsum("bomn,conp->bcmp", d, p)).reshape(
            batch, -1, n * n
        )
        dpsi[:, :, blk] = (scale * np.einsum("bomn,bcmp->conp", d, s)).reshape(
            -1, c_out, n * n
        )
    return dsig, dpsi


def s2_conv(signal: hm.S2Coeffs, filt: S2Filter) -> hm.SO3Coeffs:
    """Correlate a sphere signal with a filter bank; output lives on SO(3)."""
    psi = filt.coefficients()
    if signal.band_limit != filt.band_limit:
        raise ValueError("band limit mismatch between signal and filter")
    if signal.channels != psi.shape[0]:
        raise ValueError(
            f"signal has {signal.channels} channels, filter expects {psi.shape[0]}"
        )
    out = s2_conv_arrays(signal.data[None], psi, signal.band_limit)
    return hm.SO3Coeffs(out[0], signal.band_limit)


def so3_conv(signal: hm.SO3Coeffs, filt: SO3Filter) -> hm.SO3Coeffs:
    """Correlate a rotation-group signal with a locally supported filter."""
    psi = filt.coefficients()
    if signal.band_limit != filt.band_limit:
        raise ValueError("band limit mismatch between signal and filter")
    if signal.channels != psi.shape[0]:
        raise ValueError(
            f"signal has {signal.channels} channels, filter expects {psi.shape[0]}"
        )
    out = so3_conv_arrays(signal.data[None], psi, signal.band_limit)
    return hm.SO3Coeffs(out[0], signal.band_limit)


# ---------------------------------------------------------------------------
# spatial ReLU


_relu_table_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def relu_tables(quad: SO3Quadrature, L: int) -> tuple[np.ndarray, np.ndarray]:
    """(to_spatial, to_coeffs) matrices for the ReLU roundtrip.

    values = coeffs @ to_spatial; coeffs = values @ to_coeffs. Cached per
    (grid band limit, signal band limit).
    """
    key = (quad.band_limit, L)
    if key not in _relu_table_cache:
        B = hm._quad_basis(quad, L)
        scale = np.empty(hm.n_so3_coeffs(L))
        for l, blk in enumerate(hm.so3_block_slices(L)):
            scale[blk] = (2 * l + 1) / np.pi**2
        fwd = np.ascontiguousarray(B.T)
        bwd = np.ascontiguousarray(B * (quad.weights[:, None] * scale))
        _relu_table_cache[key] = (fwd, bwd)
    return _relu_table_cache[key]


def spatial_relu(signal: hm.SO3Coeffs, quad: SO3Quadrature) -> hm.SO3Coeffs:
    """Clamp the signal to be nonnegative in the spatial domain.

    Evaluates on the quadrature grid, applies max(0, .), transforms back.
    The grid's band limit must be at least twice the signal's so that the
    unavoidable aliasing of the kinked output stays small.
    """
    if quad.band_limit < 2 * signal.band_limit:
        raise ValueError(
            f"ReLU grid band limit {quad.band_limit} is below twice the "
            f"signal band limit {signal.band_limit}"
        )
    fwd, bwd = relu_tables(quad, signal.band_limit)
    vals = signal.data @ fwd
    return hm.SO3Coeffs(np.maximum(vals, 0.0) @ bwd, signal.band_limit)


# ---------------------------------------------------------------------------
# signal rotation (test instrument and equivariance reference)


def rotate_signal(coeffs: hm.S2Coeffs | hm.SO3Coeffs, g: np.ndarray):
    """Coefficients of x -> f(g^-1 x): per-degree left product with wigner_D."""
    blocks = hm.wigner_D_blocks(g, coeffs.band_limit)
    out = np.empty_like(coeffs.data)
    if isinstance(coeffs, hm.S2Coeffs):
        for l, D in enumerate(blocks):
            sl = slice(l * l, (l + 1) ** 2)
            out[:, sl] = coeffs.data[:, sl] @ D.T
        return hm.S2Coeffs(out, coeffs.band_limit)
    for l, (D, blk) in enumerate(zip(blocks, hm.so3_block_slices(coeffs.band_limit))):
        n = 2 * l + 1
        c = coeffs.data[:, blk].reshape(-1, n, n)
        out[:, blk] = np.einsum("mp,cpn->cmn", D, c).reshape(-1, n * n)
    return hm.SO3Coeffs(out, coeffs.band_limit)
