"""Property tests for the algebraic invariants that hold on all inputs."""

import numpy as np
from hypothesis import given, settings, strategies as st

from spherepose import harmonics as hm
from spherepose import metrics as mt
from spherepose import rotations as rot

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def quats(n):
    """Strategy: n raw 4-vectors bounded away from the zero quaternion."""
    return (
        st.lists(st.lists(finite, min_size=4, max_size=4), min_size=n, max_size=n)
        .map(lambda q: np.asarray(q, dtype=np.float64))
        .filter(lambda q: (np.linalg.norm(q, axis=1) > 1e-3).all())
        .map(lambda q: q / np.linalg.norm(q, axis=1, keepdims=True))
    )


@settings(max_examples=50, deadline=None)
@given(quats(3))
def test_compose_with_inverse_is_identity(q):
    r = rot.compose(q, rot.invert(q))
    assert np.abs(np.abs(r[:, 0]) - 1.0).max() < 1e-12  # +-identity
    assert np.abs(r[:, 1:]).max() < 1e-12


@settings(max_examples=50, deadline=None)
@given(quats(2))
def test_geodesic_distance_symmetric_and_bounded(q):
    a, b = q[:1], q[1:]
    d_ab = rot.geodesic_distance(a, b).item()
    d_ba = rot.geodesic_distance(b, a).item()
    assert abs(d_ab - d_ba) < 1e-12
    assert 0.0 <= d_ab <= np.pi + 1e-12
    assert rot.geodesic_distance(a, a).item() < 1e-6


@settings(max_examples=50, deadline=None)
@given(quats(1))
def test_double_cover_negation_is_the_same_rotation(q):
    assert rot.geodesic_distance(q, -q).item() < 1e-6
    v = np.array([0.3, -0.5, 0.8])
    np.testing.assert_allclose(
        rot.rotate_vectors(q, v), rot.rotate_vectors(-q, v), atol=1e-12
    )


@settings(max_examples=25, deadline=None)
@given(quats(2))
def test_rotate_vectors_is_a_homomorphism(q):
    v = np.array([0.3, -0.5, 0.8])
    ab = rot.compose(q[:1], q[1:])
    np.testing.assert_allclose(
        rot.rotate_vectors(ab, v),
        rot.rotate_vectors(q[:1], rot.rotate_vectors(q[1:], v)),
        atol=1e-10,
    )


@settings(max_examples=25, deadline=None)
@given(quats(2))
def test_euler_roundtrip_zyz(q):
    a, b, g = rot.to_zyz(q)
    back = rot.from_zyz(a, b, g)
    d = rot.geodesic_distance(q, back)
    assert float(np.max(d)) < 1e-6


@settings(max_examples=20, deadline=None)
@given(quats(1), st.integers(1, 4))
def test_wigner_D_is_orthogonal_for_any_rotation(q, l):
    D = hm.wigner_D(l, q[0])
    np.testing.assert_allclose(D @ D.T, np.eye(2 * l + 1), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(quats(4), quats(2))
def test_point_metric_bounds(preds, gt):
    sets = [gt, gt[:1], gt, gt[1:]]
    med, acc15, acc30 = mt.point_metrics(preds, sets)
    assert 0.0 <= med <= 180.0
    assert 0.0 <= acc15 <= acc30 <= 1.0
