"""Mollweide SVG output: projection math, encoding, determinism."""

import hashlib
import re

import numpy as np

from spherepose import rotations as rot
from spherepose import viz
from spherepose.grids import healpix_so3, nearest_index
from spherepose.head import PoseDistribution


def _delta_dist(grid, idx):
    probs = np.zeros(len(grid))
    probs[idx] = 1.0
    return PoseDistribution(grid, probs)


def _dots(svg):
    return re.findall(r'<circle[^>]*fill="#[0-9a-f]{6}"[^>]*/>', svg)


def _rings(svg):
    return re.findall(r'<circle[^>]*fill="none"[^>]*/>', svg)


# -- projection math ---------------------------------------------------------


def test_origin_maps_to_center():
    x, y = viz.mollweide_xy(np.array([0.0]), np.array([0.0]))
    assert abs(x[0]) < 1e-12 and abs(y[0]) < 1e-12


def test_poles_and_edges():
    x, y = viz.mollweide_xy(np.array([0.0]), np.array([np.pi / 2]))
    assert abs(x[0]) < 1e-12 and abs(y[0] - np.sqrt(2)) < 1e-12
    x, y = viz.mollweide_xy(np.array([np.pi]), np.array([0.0]))
    assert abs(x[0] - 2 * np.sqrt(2)) < 1e-12


def test_equal_area_on_latitude_band():
    # map area of a band must equal the sphere band area 2*pi*(sin b - sin a)
    lo, hi = 0.3, 0.7
    lats = np.linspace(lo, hi, 20001)
    x, y = viz.mollweide_xy(np.full_like(lats, np.pi), lats)
    band = np.trapezoid(2 * x, y)
    assert abs(band - 2 * np.pi * (np.sin(hi) - np.sin(lo))) < 1e-6


def test_newton_solver_converges_everywhere():
    lats = np.linspace(-np.pi / 2, np.pi / 2, 1001)
    theta = viz._mollweide_theta(lats)
    residual = 2 * theta + np.sin(2 * theta) - np.pi * np.sin(lats)
    assert np.abs(residual).max() < 1e-9
    assert np.all(np.diff(theta) > 0)


# -- svg content -------------------------------------------------------------


def test_delta_at_identity_dot_position_and_hue():
    grid = healpix_so3(2)
    idx = int(nearest_index(grid, rot.identity()))
    svg = viz.mollweide_svg(_delta_dist(grid, idx), width=800)
    dots = _dots(svg)
    assert len(dots) == 1
    # identity has XYX angles (0, 0, 0): longitude 0, latitude pi/2, the
    # top of the ellipse; hue encodes gamma = 0
    e = rot.to_euler_xyx(grid.quats[idx])
    px, py, gamma = viz._place(grid.quats[idx], 380.0, 190.0, 400.0, 220.0)
    assert f'cx="{px[0]:.2f}"' in dots[0]
    assert f'cy="{py[0]:.2f}"' in dots[0]
    assert viz._hue_hex(float(gamma[0])) in dots[0]


def test_all_below_threshold_draws_frame_only():
    grid = healpix_so3(1)
    uniform = PoseDistribution(grid, np.full(len(grid), 1.0 / len(grid)))
    svg = viz.mollweide_svg(uniform)
    assert len(_dots(svg)) == 0
    assert "<ellipse" in svg and svg.startswith("<svg")


def test_dot_area_proportional_to_probability():
    grid = healpix_so3(1)
    probs = np.zeros(len(grid))
    probs[10] = 0.8
    probs[200] = 0.2
    svg = viz.mollweide_svg(PoseDistribution(grid, probs))
    radii = sorted(float(r) for r in re.findall(r'r="([0-9.]+)"', svg))[-2:]
    assert abs(radii[1] / radii[0] - 2.0) < 1e-3  # 4x probability, 2x radius


def test_ground_truth_rings():
    grid = healpix_so3(1)
    uniform = PoseDistribution(grid, np.full(len(grid), 1.0 / len(grid)))
    gt = rot.random_rotations(5, np.random.default_rng(3))
    svg = viz.mollweide_svg(uniform, gt=gt)
    assert len(_rings(svg)) == 5  # the frame is an ellipse, not a circle


def test_rings_only_frame_is_ellipse():
    grid = healpix_so3(1)
    uniform = PoseDistribution(grid, np.full(len(grid), 1.0 / len(grid)))
    svg = viz.mollweide_svg(uniform)
    assert len(_rings(svg)) == 0


def test_deterministic_bytes(tmp_path):
    grid = healpix_so3(2)
    rng = np.random.default_rng(0)
    probs = rng.random(len(grid)) ** 8
    probs /= probs.sum()
    dist = PoseDistribution(grid, probs)
    gt = rot.random_rotations(3, rng)
    hashes = set()
    for name in ("a.svg", "b.svg"):
        path = tmp_path / name
        viz.render_mollweide(dist, gt, path=path)
        hashes.add(hashlib.sha256(path.read_bytes()).hexdigest())
    assert len(hashes) == 1
    assert viz.mollweide_svg(dist, gt) == (tmp_path / "a.svg").read_text()


def test_full_grid_render_has_no_nan():
    # every grid cell above threshold: exercises gimbal rows (beta 0 or pi)
    grid = healpix_so3(1)
    n = len(grid)
    probs = np.full(n, 1.0 / n)
    svg = viz.mollweide_svg(PoseDistribution(grid, probs), threshold=0.0)
    assert "nan" not in svg.lower()
    assert len(_dots(svg)) == n
