"""Synthetic symmetric-solid dataset: keypoint-splat renderings with pose labels.

Each shape is a set of 3D keypoints with channel assignments chosen so the
keypoint set (with channels) is exactly invariant under the shape's proper
rotation group. Rendering rotates the keypoints, projects orthographically,
and splats isotropic Gaussians with depth-based brightness, which makes
image invariance across a symmetry coset a construction property rather
than a numerical accident.

Continuous symmetries (cone, cyl) keep their shared keypoints on the
rotation axis, so invariance holds for the full circle, of which the
1-degree label discretization is a subgroup. Marked variants (tetX, cylO,
sphX) add one keypoint in a dedicated channel whose brightness is the
hinge max(0, z): the marker vanishes exactly when it faces away.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot

__all__ = [
    "SHAPES",
    "Shape",
    "SolidDataset",
    "symmetry_group",
    "render",
    "render_batch",
    "marker_visibility",
    "generate",
    "load_dataset",
]

IMAGE_SIZE = 32
SPLAT_SIGMA = 1.5  # pixels
MAGIC = b"SYML"
VERSION = 1

_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_KEYPOINT_RADIUS = 0.7


def _tet_vertices() -> np.ndarray:
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    )
    return v / np.sqrt(3.0)


def _cube_vertices() -> np.ndarray:
    g = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij"))
    return g.reshape(3, 8).T / np.sqrt(3.0)


def _ico_vertices() -> np.ndarray:
    base = []
    for a in (-1.0, 1.0):
        for b in (-_PHI, _PHI):
            base += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(base, dtype=np.float64)
    return v / np.linalg.norm(v[0])


def _face_centers(vertices: np.ndarray, k: int) -> np.ndarray:
    """Centroids of all k-subsets at minimal pairwise distance (faces)."""
    from itertools import combinations

    n = len(vertices)
    d2 = np.sum((vertices[:, None] - vertices[None]) ** 2, axis=-1)
    edge = np.min(d2[d2 > 1e-9])
    faces = []
    for idx in combinations(range(n), k):
        pair_d = [d2[i, j] for i, j in combinations(idx, 2)]
        if all(abs(p - edge) < 1e-9 for p in pair_d):
            faces.append(np.mean(vertices[list(idx)], axis=0))
    out = np.array(faces)
    return out / np.linalg.norm(out[0])


@dataclass
class Shape:
    name: str
    keypoints: np.ndarray  # (K, 3) inside the unit ball
    channels: np.ndarray  # (K,) target channel per keypoint
    marker_index: int | None = None  # keypoint rendered with hinge visibility
    continuous: bool = False

    @property
    def marked(self) -> bool:
        return self.marker_index is not None


def _build_shapes() -> dict[str, Shape]:
    r = _KEYPOINT_RADIUS
    shapes = {}

    tet_v = _tet_vertices() * r
    tet_f = _face_centers(_tet_vertices(), 3) * (0.6 * r)
    tet_pts = np.vstack([tet_v, tet_f])
    tet_ch = np.array([0] * 4 + [1] * 4)
    shapes["tet"] = Shape("tet", tet_pts, tet_ch)

    cube_v = _cube_vertices() * r
    cube_f = np.vstack([np.eye(3), -np.eye(3)]) * (0.6 * r)
    shapes["cube"] = Shape(
        "cube", np.vstack([cube_v, cube_f]), np.array([0] * 8 + [1] * 6)
    )

    ico_v = _ico_vertices() * r
    ico_f = _face_centers(_ico_vertices(), 3) * (0.6 * r)
    shapes["ico"] = Shape(
        "ico", np.vstack([ico_v, ico_f]), np.array([0] * 12 + [1] * 20)
    )

    cone_pts = np.array([[0, 0, r], [0, 0, -0.5 * r], [0, 0, 0.25 * r]])
    shapes["cone"] = Shape(
        "cone", cone_pts, np.array([0, 1, 1]), continuous=True
    )

    cyl_pts = np.array([[0, 0, r], [0, 0, -r], [0, 0, 0]])
    shapes["cyl"] = Shape("cyl", cyl_pts, np.array([0, 0, 1]), continuous=True)

    # markers must avoid every symmetry axis of the base solid, or a
    # stabilizer subgroup survives and the pose stays ambiguous
    marker_dir = np.array([3.0, 1.0, 1.0]) / np.sqrt(11.0)
    tetx_pts = np.vstack([tet_pts, marker_dir[None] * (1.1 * r)])
    shapes["tetX"] = Shape(
        "tetX", tetx_pts, np.append(tet_ch, 2), marker_index=len(tetx_pts) - 1
    )

    # off the equator so the end-to-end flip does not fix the dot
    cylo_pts = np.vstack([cyl_pts, [[0.8 * r, 0, 0.3 * r]]])
    shapes["cylO"] = Shape(
        "cylO",
        cylo_pts,
        np.array([0, 0, 1, 2]),
        marker_index=3,
        continuous=True,
    )

    sphx_pts = np.array([[0.0, 0.0, 0.0], [0.8 * r, 0.0, 0.0]])
    shapes["sphX"] = Shape(
        "sphX", sphx_pts, np.array([0, 2]), marker_index=1
    )
    return shapes


SHAPES: dict[str, Shape] = _build_shapes()
SHAPE_ORDER = ("tet", "cube", "ico", "cone", "cyl", "tetX", "cylO", "sphX")


def _closure(generators: list[np.ndarray], cap: int = 200) -> np.ndarray:
    """Finite group generated by quaternion rotations, deduped by rounding.

    Sign disambiguation happens after rounding: for 180-degree rotations
    the scalar part is zero up to noise, and canonicalizing the raw values
    would let both signs of the same element survive as distinct keys.
    """

    def key(q):
        v = np.round(np.asarray(q, dtype=np.float64).ravel(), 6) + 0.0
        for x in v:
            if x != 0.0:
                if x < 0.0:
                    v = -v + 0.0
                break
        return tuple(v)

    group = {key(rot.identity()): rot.identity()}
    frontier = list(generators)
    while frontier:
        g = frontier.pop()
        k = key(g)
        if k in group:
            continue
        group[k] = rot.canonicalize(g)
        for h in list(group.values()):
            frontier.append(rot.compose(g, h))
            frontier.append(rot.compose(h, g))
        if len(group) > cap:
            raise RuntimeError("group closure exceeded expected order")
    return np.array(list(group.values()))


def _tet_group() -> np.ndarray:
    gens = [
        rot.from_axis_angle(np.array([1.0, 1.0, 1.0]) / np.sqrt(3), 2 * np.pi / 3),
        rot.rot_z(np.pi),
        rot.rot_x(np.pi),
    ]
    return _closure(gens)


def _cube_group() -> np.ndarray:
    quats = []
    from itertools import permutations

    for perm in permutations(range(3)):
        for signs in np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, 8).T:
            M = np.zeros((3, 3))
            for i, (p, s) in enumerate(zip(perm, signs)):
                M[i, p] = s
            if np.linalg.det(M) > 0:
                quats.append(rot.matrix_to_quat(M))
    return np.array(quats)


def _ico_group() -> np.ndarray:
    axis = np.array([0.0, 1.0, _PHI])
    gens = [
        rot.from_axis_angle(axis / np.linalg.norm(axis), 2 * np.pi / 5),
        rot.rot_z(np.pi),
    ]
    return _closure(gens)


def _axis_group(flip: bool) -> np.ndarray:
    spins = rot.rot_z(np.radians(np.arange(360.0)))
    if not flip:
        return spins
    flipped = rot.compose(spins, rot.rot_x(np.pi)[None])
    return np.vstack([spins, flipped])


_group_cache: dict[str, np.ndarray] = {}


def symmetry_group(shape: str | Shape) -> np.ndarray:
    """Proper rotation group of the solid as (N, 4) quaternions.

    Continuous symmetries come discretized at 1-degree increments; marked
    shapes have only the identity.
    """
    name = shape.name if isinstance(shape, Shape) else shape
    if name not in SHAPES:
        raise ValueError(f"unknown shape {name!r}; valid: {', '.join(SHAPE_ORDER)}")
    if name not in _group_cache:
        if name in ("tetX", "cylO", "sphX"):
            g = rot.identity()[None]
        elif name == "tet":
            g = _tet_group()
        elif name == "cube":
            g = _cube_group()
        elif name == "ico":
            g = _ico_group()
        elif name == "cone":
            g = _axis_group(flip=False)
        else:  # cyl
            g = _axis_group(flip=True)
        _group_cache[name] = rot.canonicalize(g)
    return _group_cache[name]


def _pixel_grid(size: int):
    c = np.arange(size, dtype=np.float64)
    return np.meshgrid(c, c, indexing="ij")  # (row=y, col=x)


def render_batch(shape: Shape, r: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Render (B, 4) rotations to (B, 3, size, size) float32 images."""
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    pts = rot.rotate_vectors(r[:, None, :], shape.keypoints[None, :, :])
    amp = (1.0 + pts[..., 2]) / 2.0  # depth cue: front brighter
    if shape.marker_index is not None:
        amp[:, shape.marker_index] = np.maximum(0.0, pts[:, shape.marker_index, 2])
    px = (pts[..., 0] + 1.0) / 2.0 * (size - 1)
    py = (pts[..., 1] + 1.0) / 2.0 * (size - 1)

    yy, xx = _pixel_grid(size)
    d2 = (xx[None, None] - px[..., None, None]) ** 2 + (
        yy[None, None] - py[..., None, None]
    ) ** 2
    splats = amp[..., None, None] * np.exp(-d2 / (2.0 * SPLAT_SIGMA**2))

    B, K = pts.shape[:2]
    images = np.zeros((B, 3, size, size), dtype=np.float64)
    for c in range(3):
        sel = shape.channels == c
        if sel.any():
            images[:, c] = splats[:, sel].sum(axis=1)
    return images.astype(np.float32)


def render(shape: str | Shape, r: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Render one rotation to a (3, size, size) float32 image."""
    if isinstance(shape, str):
        if shape not in SHAPES:
            raise ValueError(
                f"unknown shape {shape!r}; valid: {', '.join(SHAPE_ORDER)}"
            )
        shape = SHAPES[shape]
    return render_batch(shape, np.asarray(r)[None], size)[0]


def marker_visibility(shape: Shape, labels: np.ndarray) -> np.ndarray:
    """Whether the marker keypoint faces the camera (z > 0) per rotation."""
    if shape.marker_index is None:
        raise ValueError(f"shape {shape.name!r} has no marker")
    p = rot.rotate_vectors(
        np.atleast_2d(labels), shape.keypoints[shape.marker_index]
    )
    return p[..., 2] > 0.0


@dataclass
class SolidDataset:
    shape_name: str
    split: str  # "train" or "eval"
    images: np.ndarray  # (n, 3, H, W) float32
    labels: np.ndarray  # (n, 4) float64
    equivalents: list[np.ndarray] = field(default_factory=list)  # eval only

    def __len__(self) -> int:
        return len(self.images)

    @property
    def shape(self) -> Shape:
        return SHAPES[self.shape_name]

    def marker_visible(self) -> np.ndarray:
        return marker_visibility(self.shape, self.labels)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            self._write(fh)

    def _write(self, fh) -> None:
        shape_id = SHAPE_ORDER.index(self.shape_name)
        split_id = 0 if self.split == "train" else 1
        n, _, H, W = self.images.shape
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIQII", VERSION, shape_id, split_id, n, H, W))
        for i in range(n):
            fh.write(self.images[i].astype("<f4").tobytes())
            fh.write(self.labels[i].astype("<f8").tobytes())
            eq = self.equivalents[i] if self.split == "eval" else np.empty((0, 4))
            fh.write(struct.pack("<I", len(eq)))
            if len(eq):
                fh.write(np.asarray(eq).astype("<f8").tobytes())


# marked shapes whose hidden-marker images are invariant under the base
# solid's finite symmetry group; the sphere's orbit is all of SO(3) and has
# no finite representation, so sphX keeps single-rotation label sets
_MARKED_BASE = {"tetX": "tet", "cylO": "cyl"}


def generate(
    shape: str, n: int, rng: np.random.Generator, split: str = "train"
) -> SolidDataset:
    """Draw n Haar-random poses, render them, and label them.

    Training labels are single rotations drawn uniformly from the
    symmetry-equivalent set; the eval split stores the whole set.  For
    marked shapes the set is conditional on what the image shows: a single
    rotation when the marker faces the camera, the base solid's full orbit
    when it is hidden (the image is then invariant across that orbit).
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if split not in ("train", "eval"):
        raise ValueError("split must be 'train' or 'eval'")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; valid: {', '.join(SHAPE_ORDER)}")
    sh = SHAPES[shape]
    sym = symmetry_group(shape)

    base = rot.random_rotations(n, rng)
    images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    chunk = 256
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        images[lo:hi] = render_batch(sh, base[lo:hi])

    pick = rng.integers(0, len(sym), size=n)
    equivalents: list[np.ndarray] = []
    if split == "eval":
        labels = np.empty((n, 4))
        hidden_orbit = (
            symmetry_group(_MARKED_BASE[shape]) if shape in _MARKED_BASE else None
        )
        visible = marker_visibility(sh, base) if sh.marked else None
        for i in range(n):
            orbit = sym
            if hidden_orbit is not None and not visible[i]:
                orbit = hidden_orbit
            eq = rot.canonicalize(rot.compose(base[i : i + 1], orbit))
            equivalents.append(eq)
            labels[i] = rot.canonicalize(
                rot.compose(base[i : i + 1], sym[pick[i] : pick[i] + 1])
            )[0]
    else:
        labels = np.empty((n, 4))
        for i in range(n):
            labels[i] = rot.canonicalize(
                rot.compose(base[i : i + 1], sym[pick[i] : pick[i] + 1])
            )[0]
    return SolidDataset(shape, split, images, labels, equivalents)


def load_dataset(path) -> SolidDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError("not a solid dataset file (bad magic)")
    version, shape_id, split_id, n, H, W = struct.unpack_from("<IIIQII", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    if shape_id >= len(SHAPE_ORDER):
        raise ValueError(f"unknown shape id {shape_id}")
    off = 4 + struct.calcsize("<IIIQII")
    img_bytes = 3 * H * W * 4
    images = np.empty((n, 3, H, W), dtype=np.float32)
    labels = np.empty((n, 4))
    equivalents: list[np.ndarray] = []
    for i in range(n):
        images[i] = np.frombuffer(raw, "<f4", 3 * H * W, off).reshape(3, H, W)
        off += img_bytes
        labels[i] = np.frombuffer(raw, "<f8", 4, off)
        off += 32
        (m,) = struct.unpack_from("<I", raw, off)
        off += 4
        if m:
            equivalents.append(
                np.frombuffer(raw, "<f8", 4 * m, off).reshape(m, 4).copy()
            )
            off += 32 * m
    split = "train" if split_id == 0 else "eval"
    if off != len(raw):
        raise ValueError("trailing bytes in dataset file")
    return SolidDataset(SHAPE_ORDER[shape_id], split, images, labels, equivalents)
