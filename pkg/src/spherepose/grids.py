"""Equal-area sphere pixelizations, the equal-volume SO(3) grid, and
quadrature grids with exact weights for band-limited transforms.

The S^2 grid is the classic ring-scheme equal-area pixelization: 12 base
pixels, each split in four per recursion level, laid out in iso-latitude
rings (polar caps of 4i pixels, an equatorial belt of 4*nside per ring).
Its SO(3) extension attaches 6 * 2^recursion evenly spaced third angles to
every pixel, giving 72 * 8^recursion rotations of equal Haar volume.

Haar measure on SO(3) is normalized to total volume pi^2 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import roots_legendre

from . import rotations as rot

__all__ = [
    "S2Grid",
    "SO3Grid",
    "S2Quadrature",
    "SO3Quadrature",
    "healpix_s2",
    "hemisphere",
    "healpix_so3",
    "nearest_index",
    "quadrature_s2",
    "quadrature_so3",
    "load_grid",
]

_GRID_VERSION = 1
_MAGIC_S2 = b"S2GR"
_MAGIC_SO3 = b"SOGR"


def _ring_layout(nside: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-ring (z, pixel count) for the ring-scheme pixelization."""
    zs, counts = [], []
    for i in range(1, nside):  # north cap
        zs.append(1.0 - i * i / (3.0 * nside * nside))
        counts.append(4 * i)
    for i in range(nside, 3 * nside + 1):  # equatorial belt
        zs.append(4.0 / 3.0 - 2.0 * i / (3.0 * nside))
        counts.append(4 * nside)
    for i in range(nside - 1, 0, -1):  # south cap
        zs.append(-(1.0 - i * i / (3.0 * nside * nside)))
        counts.append(4 * i)
    return np.array(zs), np.array(counts, dtype=np.int64)


def _ring_phis(nside: int, ring: int, count: int) -> np.ndarray:
    """Pixel-center azimuths of one ring, ring counted 0-based from north."""
    j = np.arange(1, count + 1, dtype=np.float64)
    if count == 4 * nside:  # belt: alternate half-pixel stagger
        i = ring + 1  # 1-based ring index matches the cap rings
        s = (i - nside + 1) % 2
        return (np.pi / (2 * nside)) * (j - s / 2.0)
    return (np.pi / (2 * (count // 4))) * (j - 0.5)


@dataclass(frozen=True)
class S2Grid:
    """Equal-area point set on the sphere.

    For full grids |points| = 12 * 4^recursion and cell_area = 4pi/|points|
    exactly; hemisphere subsets keep the parent's cell_area.
    """

    points: np.ndarray  # (n, 3) unit vectors
    recursion: int
    cell_area: float
    full: bool = True
    ring_index: np.ndarray | None = None  # (n,) 0-based iso-latitude ring
    ring_z: np.ndarray | None = None  # (n_rings,) z of each ring

    def __len__(self) -> int:
        return self.points.shape[0]

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC_S2)
            f.write(struct.pack("<IIQ", _GRID_VERSION, self.recursion, len(self)))
            f.write(np.ascontiguousarray(self.points, dtype="<f8").tobytes())


@dataclass(frozen=True)
class SO3Grid:
    """Equal-volume rotation set: every pixel of the matching S^2 grid
    combined with 6 * 2^recursion third angles about the view axis.

    Rotation i is Rz(alpha_i) Ry(beta_i) Rz(gamma_i) where (beta, alpha)
    point at the pixel center and gamma is the third angle.
    """

    quats: np.ndarray  # (n, 4)
    recursion: int
    cell_volume: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    ring_index: np.ndarray  # (n,) index into ring_beta
    ring_beta: np.ndarray  # (n_rings,) distinct beta values
    _tree_cache: list = field(default_factory=list, repr=False, compare=False)

    def __len__(self) -> int:
        return self.quats.shape[0]

    def _tree(self) -> cKDTree:
        # antipodal copies make euclidean NN agree with geodesic NN
        if not self._tree_cache:
            doubled = np.vstack([self.quats, -self.quats])
            self._tree_cache.append(cKDTree(doubled))
        return self._tree_cache[0]

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC_SO3)
            f.write(struct.pack("<IIQ", _GRID_VERSION, self.recursion, len(self)))
            f.write(np.ascontiguousarray(self.quats, dtype="<f8").tobytes())


def healpix_s2(recursion: int) -> S2Grid:
    """Ring-scheme equal-area grid with 12 * 4^recursion pixels."""
    if not 0 <= recursion <= 8:
        raise ValueError(f"recursion must be in [0, 8], got {recursion}")
    nside = 2**recursion
    zs, counts = _ring_layout(nside)
    pts = np.empty((int(counts.sum()), 3))
    ring_index = np.empty(len(pts), dtype=np.int64)
    pos = 0
    for ridx, (z, count) in enumerate(zip(zs, counts)):
        phi = _ring_phis(nside, ridx, int(count))
        s = np.sqrt(1.0 - z * z)
        pts[pos : pos + count, 0] = s * np.cos(phi)
        pts[pos : pos + count, 1] = s * np.sin(phi)
        pts[pos : pos + count, 2] = z
        ring_index[pos : pos + count] = ridx
        pos += count
    n = 12 * 4**recursion
    return S2Grid(
        points=pts,
        recursion=recursion,
        cell_area=4.0 * np.pi / n,
        ring_index=ring_index,
        ring_z=zs,
    )


def hemisphere(grid: S2Grid) -> S2Grid:
    """The subset of pixels with z >= 0 (+z faces the camera)."""
    if not grid.full:
        raise ValueError("hemisphere expects a full grid")
    keep = grid.points[:, 2] >= 0.0
    ring_keep = grid.ring_z >= 0.0
    return S2Grid(
        points=grid.points[keep],
        recursion=grid.recursion,
        cell_area=grid.cell_area,
        full=False,
        ring_index=grid.ring_index[keep],
        ring_z=grid.ring_z,  # indices stay valid against the parent layout
    )


def healpix_so3(recursion: int) -> SO3Grid:
    """Equal-volume rotation grid with 72 * 8^recursion rotations."""
    if not 0 <= recursion <= 5:
        raise ValueError(f"recursion must be in [0, 5], got {recursion}")
    s2 = healpix_s2(recursion)
    n_psi = 6 * 2**recursion
    psi = 2.0 * np.pi * np.arange(n_psi) / n_psi

    theta = np.arccos(np.clip(s2.points[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(s2.points[:, 1], s2.points[:, 0]), 2.0 * np.pi)

    # pixel-major order: rotation index = pixel * n_psi + psi_index
    alpha = np.repeat(phi, n_psi)
    beta = np.repeat(theta, n_psi)
    gamma = np.tile(psi, len(s2))
    quats = rot.from_zyz(alpha, beta, gamma)

    ring_beta = np.arccos(np.clip(s2.ring_z, -1.0, 1.0))
    ring_index = np.repeat(s2.ring_index, n_psi)
    n = len(s2) * n_psi
    return SO3Grid(
        quats=quats,
        recursion=recursion,
        cell_volume=np.pi**2 / n,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        ring_index=ring_index,
        ring_beta=ring_beta,
    )


def nearest_index(grid: SO3Grid, r: np.ndarray) -> np.ndarray | np.intp:
    """Index of the grid rotation geodesically nearest to r.

    Exact: euclidean nearest neighbor over the grid quaternions and their
    negatives is the geodesic argmin, since 4 arcsin(chord/2) is monotone.
    Accepts a single quaternion (4,) or a batch (n, 4).
    """
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    _, idx = grid._tree().query(np.atleast_2d(r), k=1)
    idx = idx % len(grid)
    return idx[0] if single else idx


def quadrature_s2(band_limit: int) -> "S2Quadrature":
    """Gauss-Legendre x uniform-azimuth grid, exact through 2*band_limit."""
    if not 0 <= band_limit <= 16:
        raise ValueError(f"band_limit must be in [0, 16], got {band_limit}")
    nodes, glw = roots_legendre(band_limit + 1)
    n_phi = 2 * band_limit + 1
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi

    z = np.repeat(nodes, n_phi)
    s = np.sqrt(1.0 - z * z)
    ph = np.tile(phi, len(nodes))
    points = np.stack([s * np.cos(ph), s * np.sin(ph), z], axis=-1)
    weights = np.repeat(glw, n_phi) * (2.0 * np.pi / n_phi)
    return S2Quadrature(points=points, weights=weights, band_limit=band_limit)


def quadrature_so3(band_limit: int) -> "SO3Quadrature":
    """Product grid uniform(alpha) x Gauss-Legendre(cos beta) x uniform(gamma).

    Weights carry the 1/8 Haar normalization so they sum to pi^2; the rule
    integrates products of two band-limited basis functions exactly, which
    is what makes fft(ifft(x)) the identity.
    """
    if not 0 <= band_limit <= 16:
        raise ValueError(f"band_limit must be in [0, 16], got {band_limit}")
    nodes, glw = roots_legendre(band_limit + 1)
    n_az = 2 * band_limit + 1
    alpha = 2.0 * np.pi * np.arange(n_az) / n_az
    beta = np.arccos(np.clip(nodes, -1.0, 1.0))
    gamma = alpha.copy()
    w_az = 2.0 * np.pi / n_az
    return SO3Quadrature(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        beta_weights=glw,
        az_weight=w_az,
        band_limit=band_limit,
    )


@dataclass(frozen=True)
class S2Quadrature:
    """Sphere quadrature; weights sum to 4pi."""

    points: np.ndarray
    weights: np.ndarray
    band_limit: int

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SO3Quadrature:
    """Rotation-group quadrature on a (alpha, beta, gamma) product grid.

    Flattened sample order is alpha-major, then beta, then gamma; weights
    sum to pi^2.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    beta_weights: np.ndarray
    az_weight: float
    band_limit: int

    def __len__(self) -> int:
        return len(self.alpha) * len(self.beta) * len(self.gamma)

    @property
    def weights(self) -> np.ndarray:
        w = np.broadcast_to(
            self.beta_weights[None, :, None] * (self.az_weight**2 / 8.0),
            (len(self.alpha), len(self.beta), len(self.gamma)),
        )
        return w.reshape(-1)

    @property
    def euler(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (alpha, beta, gamma) arrays of all sample rotations."""
        a, b, g = np.meshgrid(self.alpha, self.beta, self.gamma, indexing="ij")
        return a.reshape(-1), b.reshape(-1), g.reshape(-1)

    @property
    def rotations(self) -> np.ndarray:
        a, b, g = self.euler
        return rot.from_zyz(a, b, g)


def load_grid(path) -> S2Grid | SO3Grid:
    """Read a grid file; checks magic, version, and payload size."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic not in (_MAGIC_S2, _MAGIC_SO3):
            raise ValueError(f"not a grid file (magic {magic!r})")
        version, recursion, count = struct.unpack("<IIQ", f.read(16))
        if version != _GRID_VERSION:
            raise ValueError(f"unsupported grid version {version}")
        width = 3 if magic == _MAGIC_S2 else 4
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != count * width:
        raise ValueError("grid payload size mismatch")
    grid = healpix_s2(recursion) if magic == _MAGIC_S2 else healpix_so3(recursion)
    stored = data.reshape(count, width)
    ref = grid.points if magic == _MAGIC_S2 else grid.quats
    if stored.shape != ref.shape or not np.allclose(stored, ref, atol=1e-12):
        raise ValueError("grid payload disagrees with its (type, recursion)")
    return grid
