"""Real harmonic bases on S^2 and SO(3), and exact band-limited transforms.

Conventions, fixed once and verified by the degree-1 tests:

* Real spherical harmonics Y_{l,k}, orthonormal for the plain surface
  measure, without the Condon-Shortley sign: k > 0 pairs with cos(k phi),
  k < 0 with sin(|k| phi). Degree 1 is sqrt(3/4pi) * (y, z, x) for
  k = (-1, 0, 1).
* Rotations act by (rotate_by(g) f)(x) = f(g^-1 x). The real Wigner matrix
  wigner_D(l, g) maps coefficient vectors: coeffs(rotate_by(g) f) =
  D(l, g) @ coeffs(f), and D factors as Zrow(alpha) dreal(beta) Zrow(gamma)
  over ZYZ Euler angles.
* Haar measure on SO(3) totals pi^2, so the basis functions D^l_{mn}
  have squared integral pi^2 / (2l+1) and the uniform density is 1/pi^2.

Transforms are plain dense contractions against basis tables; at band
limits <= 16 this is faster than any clever factorization would pay for.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, gammaln

from . import rotations as rot
from .grids import S2Quadrature, SO3Quadrature

__all__ = [
    "S2Coeffs",
    "SO3Coeffs",
    "band_limit_for",
    "n_s2_coeffs",
    "n_so3_coeffs",
    "so3_block_slices",
    "sh",
    "sh_matrix",
    "wigner_d",
    "wigner_D",
    "wigner_D_blocks",
    "so3_basis",
    "s2_fft",
    "s2_ifft",
    "so3_fft",
    "so3_ifft",
]

_COEFF_VERSION = 1
_MAGIC_S2C = b"S2CF"
_MAGIC_SO3C = b"SOCF"


def n_s2_coeffs(L: int) -> int:
    return (L + 1) ** 2


def n_so3_coeffs(L: int) -> int:
    return sum((2 * l + 1) ** 2 for l in range(L + 1))


def band_limit_for(n_coeffs: int) -> int:
    """Band limit whose SO(3) coefficient count is exactly n_coeffs."""
    for L in range(32):
        if n_so3_coeffs(L) == n_coeffs:
            return L
    raise ValueError(f"{n_coeffs} is not a full-band SO(3) coefficient count")


@lru_cache(maxsize=None)
def so3_block_slices(L: int) -> tuple[slice, ...]:
    """Flat-index slice of each degree's (2l+1)x(2l+1) block."""
    out, pos = [], 0
    for l in range(L + 1):
        size = (2 * l + 1) ** 2
        out.append(slice(pos, pos + size))
        pos += size
    return tuple(out)


# ---------------------------------------------------------------------------
# spherical harmonics


def _legendre_table(L: int, z: np.ndarray) -> np.ndarray:
    """Normalized associated Legendre values, shape (len(z), L+1, L+1).

    tab[:, l, m] = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(z) for m <= l,
    Condon-Shortley-free, by the standard stable three-term recursion.
    """
    z = np.asarray(z, dtype=np.float64)
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    tab = np.zeros((len(z), L + 1, L + 1))
    tab[:, 0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L + 1):
        tab[:, m, m] = tab[:, m - 1, m - 1] * s * np.sqrt((2 * m + 1) / (2.0 * m))
    for m in range(L):
        tab[:, m + 1, m] = tab[:, m, m] * z * np.sqrt(2 * m + 3.0)
    for m in range(L + 1):
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            tab[:, l, m] = a * (z * tab[:, l - 1, m] - b * tab[:, l - 2, m])
    return tab


def sh_matrix(points: np.ndarray, L: int) -> np.ndarray:
    """All real harmonics through degree L at unit points, (n, (L+1)^2).

    Column order is (l, k) with k running -l..l inside each degree.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = points[:, 2]
    phi = np.arctan2(points[:, 1], points[:, 0])
    tab = _legendre_table(L, z)
    out = np.empty((len(points), n_s2_coeffs(L)))
    sqrt2 = np.sqrt(2.0)
    for l in range(L + 1):
        base = l * l + l
        out[:, base] = tab[:, l, 0]
        for k in range(1, l + 1):
            out[:, base + k] = sqrt2 * tab[:, l, k] * np.cos(k * phi)
            out[:, base - k] = sqrt2 * tab[:, l, k] * np.sin(k * phi)
    return out


def sh(l: int, k: int, direction: np.ndarray) -> float | np.ndarray:
    """One real spherical harmonic Y_{l,k} at unit direction(s)."""
    if not (0 <= l and abs(k) <= l):
        raise ValueError(f"invalid harmonic index (l={l}, k={k})")
    direction = np.asarray(direction, dtype=np.float64)
    single = direction.ndim == 1
    vals = sh_matrix(direction, l)[:, l * l + l + k]
    return float(vals[0]) if single else vals


# ---------------------------------------------------------------------------
# Wigner matrices


@lru_cache(maxsize=None)
def _wigner_prefactors(l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Index tables for the closed-form d-matrix: mu, nu, s, signed norm."""
    mgrid = np.arange(-l, l + 1)
    mp, m = np.meshgrid(mgrid, mgrid, indexing="ij")
    mu = np.abs(mp - m)
    nu = np.abs(mp + m)
    s = l - (mu + nu) // 2
    # norm = sqrt(s! (s+mu+nu)! / ((s+mu)! (s+nu)!)), in log space for l<=16
    ln = 0.5 * (
        gammaln(s + 1.0)
        + gammaln(s + mu + nu + 1.0)
        - gammaln(s + mu + 1.0)
        - gammaln(s + nu + 1.0)
    )
    sign = np.where(m >= mp, 1.0, (-1.0) ** ((m - mp) % 2))
    return mu, nu, s, sign * np.exp(ln)


def wigner_d(l: int, beta: float | np.ndarray) -> np.ndarray:
    """Wigner small-d matrix d^l(beta), shape (2l+1, 2l+1) (or batched).

    Rows and columns are indexed m', m = -l..l. Uses the closed form in
    Jacobi polynomials, which is stable through l = 16 (norms computed in
    log space). d^l is orthogonal; d^1_{00} = cos(beta).
    """
    beta = np.asarray(beta, dtype=np.float64)
    single = beta.ndim == 0
    b = np.atleast_1d(beta)
    mu, nu, s, norm = _wigner_prefactors(l)
    x = np.cos(b)
    sh_, ch = np.sin(b / 2.0), np.cos(b / 2.0)
    out = np.empty((len(b), 2 * l + 1, 2 * l + 1))
    for i in range(2 * l + 1):
        for j in range(2 * l + 1):
            jac = eval_jacobi(s[i, j], mu[i, j], nu[i, j], x)
            out[:, i, j] = norm[i, j] * sh_ ** mu[i, j] * ch ** nu[i, j] * jac
    return out[0] if single else out


@lru_cache(maxsize=None)
def _real_u(l: int) -> np.ndarray:
    """Unitary change of basis: real harmonics = U @ complex harmonics."""
    n = 2 * l + 1
    U = np.zeros((n, n), dtype=np.complex128)
    U[l, l] = 1.0
    for k in range(1, l + 1):
        U[l + k, l + k] = (-1.0) ** k / np.sqrt(2.0)
        U[l + k, l - k] = 1.0 / np.sqrt(2.0)
        U[l - k, l + k] = -1j * (-1.0) ** k / np.sqrt(2.0)
        U[l - k, l - k] = 1j / np.sqrt(2.0)
    return U


def _wigner_d_real(l: int, beta: np.ndarray) -> np.ndarray:
    """Real-basis y-rotation factor conj(U) d^l(beta) U^T, shape (B, n, n)."""
    d = wigner_d(l, np.atleast_1d(beta))
    U = _real_u(l)
    out = np.einsum("ma,xab,nb->xmn", U.conj(), d.astype(np.complex128), U)
    return np.ascontiguousarray(out.real)


def _z_row_mix(M: np.ndarray, angles: np.ndarray, l: int, axis_rows: bool) -> np.ndarray:
    """Apply the real z-rotation factor to rows (left) or columns (right).

    The factor is block-diagonal over (+m, -m) pairs: a 2x2 rotation by
    m*angle, so it costs O(n^2) per sample instead of a matrix product.
    """
    if l == 0:
        return M
    ms = np.arange(1, l + 1)
    pos, neg = l + ms, l - ms
    c = np.cos(angles[:, None] * ms)
    s = np.sin(angles[:, None] * ms)
    out = M.copy()
    if axis_rows:
        out[:, pos, :] = c[..., None] * M[:, pos, :] - s[..., None] * M[:, neg, :]
        out[:, neg, :] = s[..., None] * M[:, pos, :] + c[..., None] * M[:, neg, :]
    else:
        out[:, :, pos] = c[:, None, :] * M[:, :, pos] + s[:, None, :] * M[:, :, neg]
        out[:, :, neg] = -s[:, None, :] * M[:, :, pos] + c[:, None, :] * M[:, :, neg]
    return out


def so3_basis(
    alpha: np.ndarray,
    beta: np.ndarray,
    gamma: np.ndarray,
    L: int,
    *,
    unique_beta: np.ndarray | None = None,
    beta_index: np.ndarray | None = None,
    dtype=np.float64,
) -> np.ndarray:
    """Real Wigner basis values at rotations Rz(alpha) Ry(beta) Rz(gamma).

    Returns (n, n_so3_coeffs(L)); each degree block is flattened row-major
    in (m, n). When many rotations share the same beta (iso-latitude ring
    grids), pass `unique_beta` plus `beta_index` so the expensive middle
    factor is evaluated once per ring.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    n = len(alpha)
    out = np.empty((n, n_so3_coeffs(L)), dtype=dtype)
    blocks = so3_block_slices(L)
    for l in range(L + 1):
        if unique_beta is not None:
            mid = _wigner_d_real(l, unique_beta)[beta_index]
        else:
            mid = _wigner_d_real(l, np.atleast_1d(np.asarray(beta, dtype=np.float64)))
        M = _z_row_mix(mid, alpha, l, axis_rows=True)
        M = _z_row_mix(M, gamma, l, axis_rows=False)
        out[:, blocks[l]] = M.reshape(n, -1)
    return out


def wigner_D(l: int, r: np.ndarray) -> np.ndarray:
    """Real-basis Wigner D matrix of one rotation, shape (2l+1, 2l+1).

    Satisfies D(l, r1 r2) = D(l, r1) D(l, r2), is orthogonal, and at l = 1
    equals the rotation matrix in the (y, z, x) coordinate order.
    """
    a, b, g = rot.to_zyz(np.asarray(r, dtype=np.float64))
    row = so3_basis(np.array([a]), np.array([b]), np.array([g]), l)
    return row[0, so3_block_slices(l)[l]].reshape(2 * l + 1, 2 * l + 1)


def wigner_D_blocks(r: np.ndarray, L: int) -> list[np.ndarray]:
    """All degree blocks of one rotation through band limit L."""
    a, b, g = rot.to_zyz(np.asarray(r, dtype=np.float64))
    row = so3_basis(np.array([a]), np.array([b]), np.array([g]), L)
    return [
        row[0, blk].reshape(2 * l + 1, 2 * l + 1)
        for l, blk in enumerate(so3_block_slices(L))
    ]


# ---------------------------------------------------------------------------
# coefficient containers


@dataclass
class S2Coeffs:
    """Band-limited real signal(s) on the sphere: data[(channel), l*l+l+k]."""

    data: np.ndarray  # (channels, (L+1)^2)
    band_limit: int

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if self.data.shape[-1] != n_s2_coeffs(self.band_limit):
            raise ValueError(
                f"expected {n_s2_coeffs(self.band_limit)} coefficients per "
                f"channel, got {self.data.shape[-1]}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, channels: int, band_limit: int) -> "S2Coeffs":
        return cls(np.zeros((channels, n_s2_coeffs(band_limit))), band_limit)

    def save(self, path) -> None:
        _save_coeffs(path, _MAGIC_S2C, self.band_limit, self.data)

    @classmethod
    def load(cls, path) -> "S2Coeffs":
        L, data = _load_coeffs(path, _MAGIC_S2C, n_s2_coeffs)
        return cls(data, L)


@dataclass
class SO3Coeffs:
    """Band-limited real signal(s) on SO(3).

    Per channel, degree-l block stored flat and row-major: entry (m, n) of
    block l sits at so3_block_slices(L)[l].start + (m+l)*(2l+1) + (n+l).
    """

    data: np.ndarray  # (channels, sum (2l+1)^2)
    band_limit: int

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if self.data.shape[-1] != n_so3_coeffs(self.band_limit):
            raise ValueError(
                f"expected {n_so3_coeffs(self.band_limit)} coefficients per "
                f"channel, got {self.data.shape[-1]}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def block(self, channel: int, l: int) -> np.ndarray:
        """View of one degree block as a (2l+1, 2l+1) matrix."""
        blk = so3_block_slices(self.band_limit)[l]
        return self.data[channel, blk].reshape(2 * l + 1, 2 * l + 1)

    @classmethod
    def zeros(cls, channels: int, band_limit: int) -> "SO3Coeffs":
        return cls(np.zeros((channels, n_so3_coeffs(band_limit))), band_limit)

    def save(self, path) -> None:
        _save_coeffs(path, _MAGIC_SO3C, self.band_limit, self.data)

    @classmethod
    def load(cls, path) -> "SO3Coeffs":
        L, data = _load_coeffs(path, _MAGIC_SO3C, n_so3_coeffs)
        return cls(data, L)


def _save_coeffs(path, magic: bytes, L: int, data: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<III", _COEFF_VERSION, L, data.shape[0]))
        f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _load_coeffs(path, magic: bytes, dim_of) -> tuple[int, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != magic:
            raise ValueError(f"bad magic, expected {magic!r}")
        version, L, channels = struct.unpack("<III", f.read(12))
        if version != _COEFF_VERSION:
            raise ValueError(f"unsupported coefficient version {version}")
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != channels * dim_of(L):
        raise ValueError("coefficient payload size mismatch")
    return L, data.reshape(channels, dim_of(L)).copy()


# ---------------------------------------------------------------------------
# transforms


def s2_fft(values: np.ndarray, quad: S2Quadrature, band_limit: int | None = None) -> S2Coeffs:
    """Forward transform of samples on a quadrature grid, (channels, n) -> coeffs."""
    L = quad.band_limit if band_limit is None else band_limit
    if L > quad.band_limit:
        raise ValueError(f"grid supports band limit {quad.band_limit}, asked {L}")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    Y = sh_matrix(quad.points, L)
    return S2Coeffs((values * quad.weights) @ Y, L)


def s2_ifft(coeffs: S2Coeffs, points: np.ndarray) -> np.ndarray:
    """Evaluate the band-limited signal at arbitrary unit points, (channels, n)."""
    Y = sh_matrix(points, coeffs.band_limit)
    return coeffs.data @ Y.T


def _so3_degree_scale(L: int) -> np.ndarray:
    """Per-coefficient factor (2l+1)/pi^2 making fft the inverse of ifft."""
    scale = np.empty(n_so3_coeffs(L))
    for l, blk in enumerate(so3_block_slices(L)):
        scale[blk] = (2 * l + 1) / np.pi**2
    return scale


def so3_fft(values: np.ndarray, quad: SO3Quadrature, band_limit: int | None = None) -> SO3Coeffs:
    """Forward transform of samples on an SO(3) quadrature grid.

    Samples are ordered like quad.euler. The grid must hold at least the
    signal's band limit; pass a smaller band_limit to truncate (used by the
    spatial ReLU, whose grid is oversampled 2x).
    """
    L = quad.band_limit if band_limit is None else band_limit
    if L > quad.band_limit:
        raise ValueError(f"grid supports band limit {quad.band_limit}, asked {L}")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    B = _quad_basis(quad, L)
    coeffs = (values * quad.weights) @ B
    coeffs *= _so3_degree_scale(L)
    return SO3Coeffs(coeffs, L)


def so3_ifft(
    coeffs: SO3Coeffs,
    rotations: np.ndarray | None = None,
    *,
    euler: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Evaluate the band-limited signal at rotations (quaternions or euler)."""
    if euler is None:
        a, b, g = rot.to_zyz(np.atleast_2d(np.asarray(rotations, dtype=np.float64)))
    else:
        a, b, g = euler
    B = so3_basis(a, b, g, coeffs.band_limit)
    return coeffs.data @ B.T


_quad_basis_cache: dict[tuple[int, int], np.ndarray] = {}


def _quad_basis(quad: SO3Quadrature, L: int) -> np.ndarray:
    """Basis table on a product quadrature grid, cached per (grid L, signal L)."""
    key = (quad.band_limit, L)
    if key not in _quad_basis_cache:
        a, b, g = quad.euler
        n_b, n_g = len(quad.beta), len(quad.gamma)
        ring = np.tile(np.repeat(np.arange(n_b), n_g), len(quad.alpha))
        _quad_basis_cache[key] = so3_basis(
            a, b, g, L, unique_beta=quad.beta, beta_index=ring
        )
    return _quad_basis_cache[key]
