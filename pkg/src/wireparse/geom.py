"""Planar geometry shared by the codecs, matching and metrics.

Coordinates follow raster conventions: x to the right, y downwards.  Every
function working on many points accepts numpy arrays and broadcasts; the
scalar helpers are thin wrappers around those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class LineSegment:
    p1: Point
    p2: Point

    def __post_init__(self):
        p1, p2 = Point(*map(float, self.p1)), Point(*map(float, self.p2))
        if not all(math.isfinite(v) for v in (*p1, *p2)):
            raise ValueError("segment endpoints must be finite")
        if p1 == p2:
            raise ValueError("degenerate segment: p1 == p2")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @classmethod
    def from_array(cls, xy) -> "LineSegment":
        x1, y1, x2, y2 = (float(v) for v in xy)
        return cls(Point(x1, y1), Point(x2, y2))

    def as_array(self) -> np.ndarray:
        return np.array([*self.p1, *self.p2], dtype=float)

    @property
    def length(self) -> float:
        return math.hypot(self.p2.x - self.p1.x, self.p2.y - self.p1.y)


class LineCoeffs(NamedTuple):
    a: tuple[float, float]
    b: float


@dataclass(frozen=True)
class GridSpec:
    """Image size in pixels and the down-sampling rate to the coarse grid."""

    image_w: int
    image_h: int
    downsample: int = 4

    def __post_init__(self):
        if self.image_w <= 0 or self.image_h <= 0 or self.downsample <= 0:
            raise ValueError(f"invalid grid spec {self}")
        if self.image_w % self.downsample or self.image_h % self.downsample:
            raise ValueError(
                f"image size {self.image_w}x{self.image_h} not divisible by {self.downsample}"
            )

    @property
    def width(self) -> int:
        return self.image_w // self.downsample

    @property
    def height(self) -> int:
        return self.image_h // self.downsample

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Coarse-frame (x, y) coordinates of every bin center, shape (H', W')."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(float)
        return xs + 0.5, ys + 0.5


class Background:
    """Marker returned by :func:`canonical_frame` for non-attracted points."""

    def __repr__(self):
        return "Background"


BACKGROUND = Background()


class CanonicalFrame(NamedTuple):
    d: float
    theta: float
    y1c: float
    y2c: float


def line_coeffs(seg: LineSegment) -> LineCoeffs:
    """Unit normal ``a`` and offset ``b`` with ``a . x + b = 0`` on the segment."""
    (x1, y1), (x2, y2) = seg.p1, seg.p2
    dx, dy = x2 - x1, y2 - y1
    norm = math.hypot(dx, dy)
    if norm == 0:
        raise ValueError("degenerate segment")
    a = (dy / norm, -dx / norm)
    b = -(a[0] * x1 + a[1] * y1)
    return LineCoeffs(a, b)


def project_points(px, py, x1, y1, x2, y2):
    """Project points onto the supporting lines of segments (broadcasting).

    Returns ``(foot_x, foot_y, t)`` where ``t`` is the unclamped line parameter
    measured from ``(x1, y1)``.
    """
    ex, ey = x2 - x1, y2 - y1
    t = ((px - x1) * ex + (py - y1) * ey) / (ex * ex + ey * ey)
    return x1 + t * ex, y1 + t * ey, t


def project_to_segment(p: Point, seg: LineSegment) -> tuple[Point, float, float]:
    fx, fy, t = project_points(p[0], p[1], *seg.p1, *seg.p2)
    (a0, a1), b = line_coeffs(seg)
    dist = abs(a0 * p[0] + a1 * p[1] + b)
    return Point(float(fx), float(fy)), float(t), dist


def point_segment_dist2(px, py, x1, y1, x2, y2):
    """Squared distance to the segment with the foot clamped to its endpoints."""
    _, _, t = project_points(px, py, x1, y1, x2, y2)
    t = np.clip(t, 0.0, 1.0)
    dx = x1 + t * (x2 - x1) - px
    dy = y1 + t * (y2 - y1) - py
    return dx * dx + dy * dy


def segment_segment_distance(a, b) -> float:
    """Minimum Euclidean distance between two closed segments ``(x1,y1,x2,y2)``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if _segments_intersect(a, b):
        return 0.0
    d2 = min(
        float(point_segment_dist2(a[0], a[1], *b)),
        float(point_segment_dist2(a[2], a[3], *b)),
        float(point_segment_dist2(b[0], b[1], *a)),
        float(point_segment_dist2(b[2], b[3], *a)),
    )
    return math.sqrt(d2)


def segment_segment_distances(seg, others) -> np.ndarray:
    """Vectorized :func:`segment_segment_distance` of one segment to (N, 4) segments."""
    a = np.asarray(seg, float)
    b = np.asarray(others, float).reshape(-1, 4)
    bx1, by1, bx2, by2 = b.T
    d2 = np.minimum.reduce([
        point_segment_dist2(a[0], a[1], bx1, by1, bx2, by2),
        point_segment_dist2(a[2], a[3], bx1, by1, bx2, by2),
        point_segment_dist2(bx1, by1, *a),
        point_segment_dist2(bx2, by2, *a),
    ])
    d1 = _orient(bx1, by1, bx2, by2, a[0], a[1])
    d2o = _orient(bx1, by1, bx2, by2, a[2], a[3])
    d3 = _orient(*a, bx1, by1)
    d4 = _orient(*a, bx2, by2)
    crossing = (d1 * d2o < 0) & (d3 * d4 < 0)
    return np.where(crossing, 0.0, np.sqrt(d2))


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(a, b) -> bool:
    d1 = _orient(*b[:2], *b[2:], *a[:2])
    d2 = _orient(*b[:2], *b[2:], *a[2:])
    d3 = _orient(*a[:2], *a[2:], *b[:2])
    d4 = _orient(*a[:2], *a[2:], *b[2:])
    # collinear touching cases are covered by the endpoint distances
    return d1 * d2 < 0 and d3 * d4 < 0


def canonical_frame_arrays(px, py, x1, y1, x2, y2):
    """Vectorized canonical frame.

    Returns ``(valid, d, theta, y_top, y_bottom, top_is_first)``.  For entries
    where ``valid`` is False the remaining outputs are meaningless.
    ``top_is_first`` tells whether ``(x1, y1)`` became endpoint 1.
    """
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        # signed distance from the cross product: exact zero for collinear lattice points,
        # where differencing the foot and the pixel leaves rounding noise
        ex, ey = x2 - x1, y2 - y1
        length = np.hypot(ex, ey)
        s = (ex * (py - y1) - ey * (px - x1)) / length
        d = np.abs(s)
        ux, uy = -np.sign(s) * -ey / length, -np.sign(s) * ex / length
        theta = np.arctan2(uy, ux)
        theta = np.where(theta >= math.pi, theta - 2 * math.pi, theta)
        # canonical y axis is the image direction (-uy, ux)
        ya = ((x1 - px) * -uy + (y1 - py) * ux) / d
        yb = ((x2 - px) * -uy + (y2 - py) * ux) / d
        top_is_first = ya > yb
        y_top = np.where(top_is_first, ya, yb)
        y_bottom = np.where(top_is_first, yb, ya)
        valid = (d > 0) & np.isfinite(d) & (y_top > 0) & (y_bottom <= 0)
    return valid, d, theta, y_top, y_bottom, top_is_first


def canonical_frame(p: Point, seg: LineSegment) -> CanonicalFrame | Background:
    """Translate-rotate-scale frame of ``seg`` seen from ``p``.

    The attraction vector becomes the unit x axis and the segment lies on
    ``x = 1``; the endpoint with positive canonical y is endpoint 1.
    """
    valid, d, theta, y1c, y2c, _ = canonical_frame_arrays(
        np.float64(p[0]), np.float64(p[1]), *seg.p1, *seg.p2
    )
    if not valid:
        return BACKGROUND
    return CanonicalFrame(float(d), float(theta), float(y1c), float(y2c))


def frame_to_endpoints(px, py, d, theta, y1c, y2c):
    """Inverse of the canonical frame: ``p + d * R(theta) @ (1, y_k)``."""
    c, s = np.cos(theta), np.sin(theta)
    e1x = px + d * (c - s * y1c)
    e1y = py + d * (s + c * y1c)
    e2x = px + d * (c - s * y2c)
    e2y = py + d * (s + c * y2c)
    return e1x, e1y, e2x, e2y


def rotate(x, y, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * x - s * y, s * x + c * y


def wrap_angle(theta):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(theta) + math.pi) % (2 * math.pi) - math.pi
