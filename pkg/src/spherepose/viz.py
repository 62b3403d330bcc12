"""Mollweide-projection SVG rendering of rotation distributions.

A rotation is split into intrinsic X-Y-X angles: the first two place a
dot at (longitude, latitude) = (alpha, pi/2 - beta) under the equal-area
Mollweide map, and the third angle picks the dot's hue around the HSV
wheel. Dot area is proportional to cell probability; cells below the
threshold (default 4x the uniform cell probability) are suppressed.
Ground-truth rotations are drawn as open rings in the same encoding.

Output is plain SVG 1.1 text with fixed-precision coordinates, so a
given distribution always renders to identical bytes.
"""

from __future__ import annotations

import colorsys

import numpy as np

from . import rotations as rot
from .head import PoseDistribution

__all__ = ["mollweide_svg", "render_mollweide"]

# frozen display choices
MAX_DOT_RADIUS = 6.0  # px, at the most probable cell
GT_RING_RADIUS = 8.0
DOT_SATURATION = 0.85
DOT_VALUE = 0.90


def _mollweide_theta(lat: np.ndarray) -> np.ndarray:
    """Auxiliary angle: 2*theta + sin(2*theta) = pi * sin(lat)."""
    lat = np.asarray(lat, dtype=np.float64)
    target = np.pi * np.sin(lat)
    theta = lat.copy()
    polar = np.abs(np.abs(lat) - np.pi / 2) < 1e-9
    for _ in range(15):
        denom = 2.0 + 2.0 * np.cos(2 * theta)
        step = np.where(
            polar, 0.0, (2 * theta + np.sin(2 * theta) - target) / np.maximum(denom, 1e-12)
        )
        theta = theta - step
    return np.where(polar, np.sign(lat) * np.pi / 2, theta)


def mollweide_xy(lon: np.ndarray, lat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-radius Mollweide map: x in [-2sqrt2, 2sqrt2], y in [-sqrt2, sqrt2]."""
    theta = _mollweide_theta(lat)
    x = (2.0 * np.sqrt(2.0) / np.pi) * np.asarray(lon) * np.cos(theta)
    y = np.sqrt(2.0) * np.sin(theta)
    return x, y


def _hue_hex(gamma: float) -> str:
    h = (gamma + np.pi) / (2.0 * np.pi) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, DOT_SATURATION, DOT_VALUE)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def _canvas(width: int):
    height = int(width * 0.55)
    a = width / 2.0 - 20.0  # ellipse semi-axes
    b = a / 2.0
    cx, cy = width / 2.0, height / 2.0
    return height, a, b, cx, cy


def _place(quats: np.ndarray, a, b, cx, cy):
    e = rot.to_euler_xyx(np.atleast_2d(quats))
    lon, lat, gamma = e.alpha, np.pi / 2 - e.beta, e.gamma
    x, y = mollweide_xy(lon, lat)
    px = cx + x / (2.0 * np.sqrt(2.0)) * a
    py = cy - y / np.sqrt(2.0) * b
    return px, py, np.atleast_1d(gamma)


def mollweide_svg(
    dist: PoseDistribution,
    gt: np.ndarray | None = None,
    threshold: float | None = None,
    width: int = 800,
) -> str:
    """Render a distribution (and optional ground-truth set) to SVG text."""
    probs = dist.probs
    n = len(probs)
    if threshold is None:
        threshold = 4.0 / n
    height, a, b, cx, cy = _canvas(width)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<ellipse cx="{cx:.1f}" cy="{cy:.1f}" rx="{a:.1f}" ry="{b:.1f}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
        f'<line x1="{cx - a:.1f}" y1="{cy:.1f}" x2="{cx + a:.1f}" y2="{cy:.1f}" '
        'stroke="#ccc" stroke-width="0.5"/>',
        f'<line x1="{cx:.1f}" y1="{cy - b:.1f}" x2="{cx:.1f}" y2="{cy + b:.1f}" '
        'stroke="#ccc" stroke-width="0.5"/>',
    ]

    keep = np.flatnonzero(probs > threshold)
    if len(keep):
        p = probs[keep]
        # large dots first so small ones stay visible; index breaks ties
        order = np.lexsort((keep, -p))
        keep, p = keep[order], p[order]
        px, py, gamma = _place(dist.grid.quats[keep], a, b, cx, cy)
        radius = MAX_DOT_RADIUS * np.sqrt(p / p.max())
        for x, y, r, g in zip(px, py, radius, gamma):
            parts.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.3f}" '
                f'fill="{_hue_hex(float(g))}" fill-opacity="0.75"/>'
            )

    if gt is not None and len(np.atleast_2d(gt)):
        px, py, gamma = _place(gt, a, b, cx, cy)
        for x, y, g in zip(np.atleast_1d(px), np.atleast_1d(py), gamma):
            parts.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{GT_RING_RADIUS:.1f}" '
                f'fill="none" stroke="{_hue_hex(float(g))}" stroke-width="2"/>'
            )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_mollweide(
    dist: PoseDistribution,
    gt: np.ndarray | None = None,
    threshold: float | None = None,
    *,
    path,
    width: int = 800,
) -> None:
    """Write the SVG to path; identical inputs write identical bytes."""
    svg = mollweide_svg(dist, gt, threshold, width=width)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(svg)
