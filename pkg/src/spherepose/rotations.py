"""Rotations as unit quaternions: conversions, composition, distances, sampling.

Quaternions are stored (w, x, y, z) in float64 arrays of shape (..., 4) and
act on column vectors, so ``quat_to_matrix(compose(a, b)) == R_a @ R_b``.
The double cover is collapsed by ``canonicalize`` (w >= 0, ties broken by the
first nonzero component being positive).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "EulerXYX",
    "canonicalize",
    "compose",
    "from_axis_angle",
    "from_euler_xyx",
    "from_zyz",
    "geodesic_distance",
    "identity",
    "invert",
    "matrix_to_quat",
    "quat_to_matrix",
    "random_rotations",
    "rot_x",
    "rot_y",
    "rot_z",
    "rotate_vectors",
    "sample_uniform",
    "to_euler_xyx",
    "to_zyz",
]


class EulerXYX(NamedTuple):
    """Intrinsic X(alpha) Y(beta) X(gamma) Euler angles, radians.

    beta lies in [0, pi]; alpha and gamma in [-pi, pi).
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


def identity(shape: tuple[int, ...] = ()) -> np.ndarray:
    """Identity quaternion(s) of the requested leading shape."""
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Normalize and pick the representative with w >= 0.

    Ties at w == 0 are broken by requiring the first nonzero of (x, y, z)
    to be positive, so q and -q always map to the same output.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    flip = q[..., 0] < 0
    for i in range(1, 4):
        on_tie = (q[..., :i] == 0).all(axis=-1)
        flip = flip | (on_tie & (q[..., i] < 0))
    return np.where(flip[..., None], -q, q)


def compose(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product; the rotation q1 applied after q2."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 + y1 * w2 + z1 * x2 - x1 * z2,
            w1 * z2 + z1 * w2 + x1 * y2 - y1 * x2,
        ],
        axis=-1,
    )


def invert(q: np.ndarray) -> np.ndarray:
    """Inverse rotation (quaternion conjugate for unit quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix view, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    row0 = np.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1
    )
    row1 = np.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1
    )
    row2 = np.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1
    )
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Quaternion from a rotation matrix (Shepperd's method), canonicalized."""
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    R = R.reshape((-1, 3, 3))
    n = R.shape[0]
    q = np.empty((n, 4))
    # Four algebraically equivalent extractions; pick the best-conditioned one
    # per matrix (largest of trace and diagonal entries).
    tr = np.trace(R, axis1=-2, axis2=-1)
    choice = np.argmax(np.stack([tr, R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=-1), axis=-1)

    m = choice == 0
    if m.any():
        s = np.sqrt(1.0 + tr[m]) * 2.0
        q[m, 0] = 0.25 * s
        q[m, 1] = (R[m, 2, 1] - R[m, 1, 2]) / s
        q[m, 2] = (R[m, 0, 2] - R[m, 2, 0]) / s
        q[m, 3] = (R[m, 1, 0] - R[m, 0, 1]) / s
    m = choice == 1
    if m.any():
        s = np.sqrt(1.0 + R[m, 0, 0] - R[m, 1, 1] - R[m, 2, 2]) * 2.0
        q[m, 0] = (R[m, 2, 1] - R[m, 1, 2]) / s
        q[m, 1] = 0.25 * s
        q[m, 2] = (R[m, 0, 1] + R[m, 1, 0]) / s
        q[m, 3] = (R[m, 0, 2] + R[m, 2, 0]) / s
    m = choice == 2
    if m.any():
        s = np.sqrt(1.0 - R[m, 0, 0] + R[m, 1, 1] - R[m, 2, 2]) * 2.0
        q[m, 0] = (R[m, 0, 2] - R[m, 2, 0]) / s
        q[m, 1] = (R[m, 0, 1] + R[m, 1, 0]) / s
        q[m, 2] = 0.25 * s
        q[m, 3] = (R[m, 1, 2] + R[m, 2, 1]) / s
    m = choice == 3
    if m.any():
        s = np.sqrt(1.0 - R[m, 0, 0] - R[m, 1, 1] + R[m, 2, 2]) * 2.0
        q[m, 0] = (R[m, 1, 0] - R[m, 0, 1]) / s
        q[m, 1] = (R[m, 0, 2] + R[m, 2, 0]) / s
        q[m, 2] = (R[m, 1, 2] + R[m, 2, 1]) / s
        q[m, 3] = 0.25 * s
    return canonicalize(q.reshape(batch + (4,)))


def rotate_vectors(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply rotation(s) to 3-vector(s); broadcasts over leading axes."""
    return np.squeeze(quat_to_matrix(q) @ np.asarray(v, dtype=np.float64)[..., None], -1)


def geodesic_distance(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Rotation angle of r1^-1 r2 in radians, in [0, pi].

    Equals arccos((tr(R1^T R2) - 1) / 2) with the argument clamped to [-1, 1].
    Computed as 4 arcsin(chord / 2) on the double cover (rotation angle is
    twice the S^3 arc), which is the same quantity but stays accurate for
    nearly equal rotations where arccos loses half the significant digits.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    chord = np.minimum(
        np.linalg.norm(q1 - q2, axis=-1), np.linalg.norm(q1 + q2, axis=-1)
    )
    return 4.0 * np.arcsin(np.clip(chord / 2.0, 0.0, np.sqrt(0.5)))


def sample_uniform(rng: np.random.Generator) -> np.ndarray:
    """One Haar-uniform rotation."""
    return random_rotations(1, rng)[0]


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotations, shape (n, 4).

    A normalized 4D Gaussian is uniform on S^3, hence Haar on SO(3).
    """
    q = rng.standard_normal((n, 4))
    return canonicalize(q)


def from_axis_angle(axis: np.ndarray, angle: float | np.ndarray) -> np.ndarray:
    """Rotation by `angle` radians about `axis` (need not be unit length)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)
    batch = np.broadcast_shapes(axis.shape[:-1], angle.shape)
    axis = np.broadcast_to(axis, batch + (3,))
    half = np.broadcast_to(angle, batch) / 2.0
    return np.concatenate(
        [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
    )


def rot_x(angle: float | np.ndarray) -> np.ndarray:
    return from_axis_angle(np.array([1.0, 0.0, 0.0]), angle)


def rot_y(angle: float | np.ndarray) -> np.ndarray:
    return from_axis_angle(np.array([0.0, 1.0, 0.0]), angle)


def rot_z(angle: float | np.ndarray) -> np.ndarray:
    return from_axis_angle(np.array([0.0, 0.0, 1.0]), angle)


def from_zyz(alpha, beta, gamma) -> np.ndarray:
    """Quaternion of Rz(alpha) Ry(beta) Rz(gamma); broadcasts."""
    alpha, beta, gamma = np.broadcast_arrays(
        np.asarray(alpha, dtype=np.float64),
        np.asarray(beta, dtype=np.float64),
        np.asarray(gamma, dtype=np.float64),
    )
    cb, sb = np.cos(beta / 2), np.sin(beta / 2)
    return np.stack(
        [
            cb * np.cos((alpha + gamma) / 2),
            sb * np.sin((gamma - alpha) / 2),
            sb * np.cos((alpha - gamma) / 2),
            cb * np.sin((alpha + gamma) / 2),
        ],
        axis=-1,
    )


def _wrap_pi(a: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)."""
    return np.mod(a + np.pi, 2 * np.pi) - np.pi


def to_zyz(q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z(alpha) Y(beta) Z(gamma) Euler angles of a rotation.

    Gimbal convention: for beta == 0 (or pi) gamma is set to 0 and the
    z-angle folds into alpha.
    """
    R = quat_to_matrix(q)
    beta = np.arccos(np.clip(R[..., 2, 2], -1.0, 1.0))
    sb = np.sin(beta)
    regular = sb > 1e-9
    alpha = np.where(
        regular,
        np.arctan2(R[..., 1, 2], R[..., 0, 2]),
        np.where(
            R[..., 2, 2] > 0,
            np.arctan2(R[..., 1, 0], R[..., 0, 0]),
            np.arctan2(-R[..., 1, 0], -R[..., 0, 0]),
        ),
    )
    gamma = np.where(regular, np.arctan2(R[..., 2, 1], -R[..., 2, 0]), 0.0)
    return _wrap_pi(alpha), beta, _wrap_pi(gamma)


def from_euler_xyx(alpha, beta, gamma) -> np.ndarray:
    """Quaternion of Rx(alpha) Ry(beta) Rx(gamma); broadcasts."""
    return compose(rot_x(alpha), compose(rot_y(beta), rot_x(gamma)))


def to_euler_xyx(q: np.ndarray) -> EulerXYX:
    """Intrinsic X(alpha) Y(beta) X(gamma) angles of a rotation.

    Gimbal convention: for beta == 0 (or pi) gamma is set to 0 and the
    x-angle folds into alpha.
    """
    R = quat_to_matrix(q)
    beta = np.arccos(np.clip(R[..., 0, 0], -1.0, 1.0))
    sb = np.sin(beta)
    regular = sb > 1e-9
    alpha = np.where(
        regular,
        np.arctan2(R[..., 1, 0], -R[..., 2, 0]),
        np.arctan2(R[..., 2, 1], R[..., 1, 1]),
    )
    gamma = np.where(regular, np.arctan2(R[..., 0, 1], R[..., 0, 2]), 0.0)
    return EulerXYX(_wrap_pi(alpha), beta, _wrap_pi(gamma))
