import numpy as np
import pytest
from scipy.special import sph_harm_y

from spherepose import grids
from spherepose import harmonics as hm
from spherepose import rotations as rot


RNG = np.random.default_rng(7)


def random_directions(n, rng=RNG):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# spherical harmonics


def test_sh_closed_forms():
    z = np.array([0.0, 0.0, 1.0])
    assert abs(hm.sh(0, 0, z) - 1 / (2 * np.sqrt(np.pi))) < 1e-15
    assert abs(hm.sh(1, 0, z) - np.sqrt(3 / (4 * np.pi))) < 1e-15


def test_sh_degree_one_is_scaled_coordinates():
    d = random_directions(20)
    c = np.sqrt(3 / (4 * np.pi))
    np.testing.assert_allclose(hm.sh(1, -1, d), c * d[:, 1], atol=1e-14)
    np.testing.assert_allclose(hm.sh(1, 0, d), c * d[:, 2], atol=1e-14)
    np.testing.assert_allclose(hm.sh(1, 1, d), c * d[:, 0], atol=1e-14)


def test_sh_against_scipy():
    # real convention: Y_{l,k} = sqrt(2) (-1)^k Re/Im of the complex harmonic
    d = random_directions(50)
    theta = np.arccos(d[:, 2])
    phi = np.arctan2(d[:, 1], d[:, 0])
    for l, k in [(2, 1), (3, 2), (5, 4), (6, 6), (4, 0)]:
        ref = sph_harm_y(l, k, theta, phi)
        if k == 0:
            np.testing.assert_allclose(hm.sh(l, 0, d), ref.real, atol=1e-12)
        else:
            s = np.sqrt(2) * (-1.0) ** k
            np.testing.assert_allclose(hm.sh(l, k, d), s * ref.real, atol=1e-12)
            np.testing.assert_allclose(hm.sh(l, -k, d), s * ref.imag, atol=1e-12)


def test_sh_orthonormal_on_quadrature():
    q = grids.quadrature_s2(6)
    Y = hm.sh_matrix(q.points, 6)
    gram = (Y * q.weights[:, None]).T @ Y
    assert np.abs(gram - np.eye(hm.n_s2_coeffs(6))).max() < 1e-8


def test_sh_index_validation():
    with pytest.raises(ValueError):
        hm.sh(2, 3, np.array([0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# Wigner matrices


def test_wigner_d_degree_zero_and_one():
    assert hm.wigner_d(0, 0.4).shape == (1, 1)
    assert hm.wigner_d(0, 0.4)[0, 0] == 1.0
    b = 0.7
    d1 = hm.wigner_d(1, b)
    s2h, c2h = np.sin(b / 2) ** 2, np.cos(b / 2) ** 2
    sb, cb = np.sin(b), np.cos(b)
    ref = np.array(
        [
            [c2h, sb / np.sqrt(2), s2h],
            [-sb / np.sqrt(2), cb, sb / np.sqrt(2)],
            [s2h, -sb / np.sqrt(2), c2h],
        ]
    )
    np.testing.assert_allclose(d1, ref, atol=1e-14)
    assert abs(hm.wigner_d(1, np.pi / 2)[1, 1]) < 1e-12  # d^1_00 = cos(beta)


def test_wigner_d_orthogonal_through_l16():
    for l in (2, 7, 16):
        d = hm.wigner_d(l, 1.1)
        assert np.abs(d @ d.T - np.eye(2 * l + 1)).max() < 1e-10
        assert np.isfinite(d).all()


def test_wigner_d_one_parameter_subgroup():
    # rotations about a fixed axis compose additively in the angle
    for l in (1, 3, 6):
        lhs = hm.wigner_d(l, 0.7) @ hm.wigner_d(l, 0.4)
        np.testing.assert_allclose(lhs, hm.wigner_d(l, 1.1), atol=1e-12)


def test_wigner_d_batched():
    betas = np.linspace(0, np.pi, 5)
    d = hm.wigner_d(3, betas)
    assert d.shape == (5, 7, 7)
    np.testing.assert_allclose(d[0], np.eye(7), atol=1e-14)


def test_wigner_D_identity():
    for l in (0, 1, 4):
        np.testing.assert_allclose(
            hm.wigner_D(l, rot.identity()), np.eye(2 * l + 1), atol=1e-13
        )


def test_wigner_D_degree_one_is_permuted_rotation_matrix():
    # basis order (y, z, x): pins every sign convention at once
    q = rot.random_rotations(10, RNG)
    perm = np.ix_([1, 2, 0], [1, 2, 0])
    for k in range(10):
        R = rot.quat_to_matrix(q[k])
        np.testing.assert_allclose(hm.wigner_D(1, q[k]), R[perm], atol=1e-12)


def test_wigner_D_homomorphism():
    for l in (2, 6):
        for k in range(5):
            a = rot.sample_uniform(RNG)
            b = rot.sample_uniform(RNG)
            lhs = hm.wigner_D(l, rot.compose(a, b))
            rhs = hm.wigner_D(l, a) @ hm.wigner_D(l, b)
            assert np.abs(lhs - rhs).max() < 1e-9


def test_wigner_D_rotates_harmonics():
    # Y_k(g^-1 x) = sum_j D_jk(g) Y_j(x): the binding spatial contract
    g = rot.sample_uniform(RNG)
    x = random_directions(7)
    xg = rot.rotate_vectors(rot.invert(g), x)
    for l in (1, 3, 6):
        D = hm.wigner_D(l, g)
        Yx = hm.sh_matrix(x, l)[:, l * l :]
        Yxg = hm.sh_matrix(xg, l)[:, l * l :]
        assert np.abs(Yx @ D - Yxg).max() < 1e-12


def test_wigner_D_squared_integral():
    # int D^l_{mn}(g)^2 dg = pi^2/(2l+1) with total measure pi^2
    q = grids.quadrature_so3(5)
    a, b, g = q.euler
    B = hm.so3_basis(a, b, g, 5)
    gram = (B * q.weights[:, None]).T @ B
    want = np.zeros(hm.n_so3_coeffs(5))
    for l, blk in enumerate(hm.so3_block_slices(5)):
        want[blk] = np.pi**2 / (2 * l + 1)
    assert np.abs(gram - np.diag(want)).max() < 1e-6


def test_so3_basis_ring_sharing_matches_direct():
    grid = grids.healpix_so3(1)
    direct = hm.so3_basis(grid.alpha, grid.beta, grid.gamma, 3)
    shared = hm.so3_basis(
        grid.alpha,
        grid.beta,
        grid.gamma,
        3,
        unique_beta=grid.ring_beta,
        beta_index=grid.ring_index,
    )
    np.testing.assert_allclose(direct, shared, atol=1e-13)


# ---------------------------------------------------------------------------
# transforms


def test_s2_fft_constant():
    q = grids.quadrature_s2(4)
    c = hm.s2_fft(np.full((1, len(q)), 2.5), q).data[0]
    assert abs(c[0] - 2.5 * 2 * np.sqrt(np.pi)) < 1e-10
    assert np.abs(c[1:]).max() < 1e-9


def test_s2_fft_picks_out_harmonic():
    q = grids.quadrature_s2(6)
    idx = 3 * 3 + 3 + 2  # (l=3, k=2)
    f = hm.sh_matrix(q.points, 3)[:, idx]
    c = hm.s2_fft(f[None], q, band_limit=3).data[0]
    assert abs(c[idx] - 1.0) < 1e-9
    assert np.abs(np.delete(c, idx)).max() < 1e-9


def test_s2_roundtrip():
    q = grids.quadrature_s2(8)
    c = RNG.standard_normal((3, hm.n_s2_coeffs(8)))
    f = hm.s2_ifft(hm.S2Coeffs(c, 8), q.points)
    back = hm.s2_fft(f, q).data
    assert np.abs(back - c).max() / np.abs(c).max() < 1e-10


def test_so3_fft_constant():
    q = grids.quadrature_so3(3)
    c = hm.so3_fft(np.full((1, len(q)), 1.7), q).data[0]
    blocks = hm.so3_block_slices(3)
    assert abs(c[0] - 1.7) < 1e-10  # D^0 = 1: coefficient is the value itself
    assert np.abs(c[blocks[1].start :]).max() < 1e-9


def test_so3_fft_picks_out_basis_function():
    q = grids.quadrature_so3(4)
    a, b, g = q.euler
    blk = hm.so3_block_slices(3)[3]
    idx = blk.start + (2 + 3) * 7 + (1 + 3)  # D^3_{2,1}
    f = hm.so3_basis(a, b, g, 3)[:, idx]
    c = hm.so3_fft(f[None], q, band_limit=3).data[0]
    assert abs(c[idx] - 1.0) < 1e-9
    assert np.abs(np.delete(c, idx)).max() < 1e-9


def test_so3_roundtrip():
    q = grids.quadrature_so3(8)
    c = RNG.standard_normal((2, hm.n_so3_coeffs(8)))
    f = hm.so3_ifft(hm.SO3Coeffs(c, 8), euler=q.euler)
    back = hm.so3_fft(f, q).data
    assert np.abs(back - c).max() / np.abs(c).max() < 1e-8


def test_so3_ifft_at_quaternions():
    c = hm.SO3Coeffs(RNG.standard_normal((1, hm.n_so3_coeffs(4))), 4)
    r = rot.random_rotations(10, RNG)
    a, b, g = rot.to_zyz(r)
    np.testing.assert_allclose(
        hm.so3_ifft(c, r), hm.so3_ifft(c, euler=(a, b, g)), atol=1e-12
    )


def test_transforms_linear():
    q = grids.quadrature_s2(5)
    f = RNG.standard_normal((1, len(q)))
    g = RNG.standard_normal((1, len(q)))
    lhs = hm.s2_fft(2.0 * f + 3.0 * g, q).data
    rhs = 2.0 * hm.s2_fft(f, q).data + 3.0 * hm.s2_fft(g, q).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_parseval():
    q = grids.quadrature_so3(6)
    c = RNG.standard_normal((1, hm.n_so3_coeffs(6)))
    f = hm.so3_ifft(hm.SO3Coeffs(c, 6), euler=q.euler)
    e_spatial = (f[0] ** 2 * q.weights).sum()
    e_coeff = sum(
        np.pi**2 / (2 * l + 1) * np.sum(c[0, blk] ** 2)
        for l, blk in enumerate(hm.so3_block_slices(6))
    )
    assert abs(e_spatial - e_coeff) / e_coeff < 1e-8

    qs = grids.quadrature_s2(6)
    cs = RNG.standard_normal((1, hm.n_s2_coeffs(6)))
    fs = hm.s2_ifft(hm.S2Coeffs(cs, 6), qs.points)
    assert abs((fs[0] ** 2 * qs.weights).sum() - (cs**2).sum()) / (cs**2).sum() < 1e-8


def test_band_limit_guard():
    q = grids.quadrature_s2(3)
    with pytest.raises(ValueError):
        hm.s2_fft(np.zeros((1, len(q))), q, band_limit=5)
    qs = grids.quadrature_so3(3)
    with pytest.raises(ValueError):
        hm.so3_fft(np.zeros((1, len(qs))), qs, band_limit=4)


def test_coeff_container_validation():
    with pytest.raises(ValueError):
        hm.S2Coeffs(np.zeros((1, 10)), 6)
    with pytest.raises(ValueError):
        hm.SO3Coeffs(np.zeros((1, 10)), 2)


def test_coeff_serialization(tmp_path):
    c = hm.SO3Coeffs(RNG.standard_normal((3, hm.n_so3_coeffs(2))), 2)
    p = tmp_path / "c.so3c"
    c.save(p)
    back = hm.SO3Coeffs.load(p)
    np.testing.assert_array_equal(back.data, c.data)
    assert back.band_limit == 2

    s = hm.S2Coeffs(RNG.standard_normal((2, hm.n_s2_coeffs(3))), 3)
    p2 = tmp_path / "c.s2c"
    s.save(p2)
    back2 = hm.S2Coeffs.load(p2)
    np.testing.assert_array_equal(back2.data, s.data)
    with pytest.raises(ValueError):
        hm.S2Coeffs.load(p)


def test_so3_block_view():
    c = hm.SO3Coeffs.zeros(2, 3)
    c.block(1, 2)[:] = 1.0
    blk = hm.so3_block_slices(3)[2]
    assert (c.data[1, blk] == 1.0).all()
    assert (c.data[0] == 0.0).all()
