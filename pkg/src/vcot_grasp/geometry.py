"""Oriented grasp rectangles, overlap math and the grasp-success predicate.

Coordinates are (column, row) pixels with the row axis pointing down. A grasp
angle rotates the opening direction from +column toward +row and is kept in
[0, 180) degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Point = tuple[float, float]
Quad = tuple[Point, Point, Point, Point]

CLIP_EPS = 1e-9


@dataclass(frozen=True)
class GraspRect:
    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite grasp parameters: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"grasp extents must be positive, got w={self.w}, h={self.h}")
        theta = float(self.theta) % 180.0
        if theta >= 180.0:  # -1e-18 % 180 rounds up to 180.0
            theta = 0.0
        object.__setattr__(self, "theta", theta)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h, self.theta]

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class AxisBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"invalid box {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> Point:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def corners(g: GraspRect) -> Quad:
    """Corners of ``g``, counterclockwise (positive shoelace area)."""
    t = math.radians(g.theta)
    ux, uy = math.cos(t), math.sin(t)
    vx, vy = -uy, ux
    a, b = 0.5 * g.w, 0.5 * g.h
    return (
        (g.x + a * ux + b * vx, g.y + a * uy + b * vy),
        (g.x - a * ux + b * vx, g.y - a * uy + b * vy),
        (g.x - a * ux - b * vx, g.y - a * uy - b * vy),
        (g.x + a * ux - b * vx, g.y + a * uy - b * vy),
    )


def shoelace_area(poly: Sequence[Point]) -> float:
    """Signed area; positive for the orientation :func:`corners` produces."""
    n = len(poly)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clipping of ``subject`` by the convex polygon ``clip``.

    ``clip`` must have positive signed area. Points within ``CLIP_EPS`` of a
    clip edge count as inside.
    """
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        elen = math.hypot(ex, ey)
        if elen == 0.0:
            continue

        def dist(p):
            return (ex * (p[1] - ay) - ey * (p[0] - ax)) / elen

        inp = out
        out = []
        s = inp[-1]
        ds = dist(s)
        for e in inp:
            de = dist(e)
            if de >= -CLIP_EPS:
                if ds < -CLIP_EPS:
                    out.append(_cut(s, e, ds, de))
                out.append(e)
            elif ds >= -CLIP_EPS:
                out.append(_cut(s, e, ds, de))
            s, ds = e, de
    return out


def _cut(s: Point, e: Point, ds: float, de: float) -> Point:
    denom = ds - de
    if denom == 0.0:
        return e
    t = ds / denom
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def polygon_intersection_area(a: Sequence[Point], b: Sequence[Point]) -> float:
    """Area of the intersection of two convex, positively oriented polygons."""
    inter = clip_convex(a, b)
    return max(shoelace_area(inter), 0.0)


def rect_iou(a: GraspRect, b: GraspRect) -> float:
    inter = polygon_intersection_area(corners(a), corners(b))
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def axis_iou(a: AxisBox, b: AxisBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def angle_delta(t1: float, t2: float) -> float:
    """Orientation difference of two grasp angles, in [0, 90] degrees."""
    d = abs(t1 - t2) % 180.0
    return min(d, 180.0 - d)


def grasp_success(
    pred: GraspRect,
    truths: Sequence[GraspRect],
    iou_thresh: float = 0.25,
    angle_thresh: float = 30.0,
) -> bool:
    """Rectangle metric: IoU strictly above ``iou_thresh`` and angle within ``angle_thresh``."""
    if not truths:
        raise ValueError("no ground truth")
    for t in truths:
        if angle_delta(pred.theta, t.theta) <= angle_thresh and rect_iou(pred, t) > iou_thresh:
            return True
    return False


# --- rasterization oracle -------------------------------------------------


def _row_interval(g: GraspRect, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column interval covered by ``g`` on each horizontal line ``y = ys``.

    Empty rows come back with lo > hi.
    """
    t = math.radians(g.theta)
    lo = np.full(ys.shape, -np.inf)
    hi = np.full(ys.shape, np.inf)
    # slabs |(p - c).n| <= half for n in {u, v}
    for nx, ny, half in ((math.cos(t), math.sin(t), 0.5 * g.w), (-math.sin(t), math.cos(t), 0.5 * g.h)):
        rest = (ys - g.y) * ny
        if abs(nx) < 1e-15:
            inside = np.abs(rest) <= half
            lo = np.where(inside, lo, np.inf)
            hi = np.where(inside, hi, -np.inf)
            continue
        x1 = g.x + (-half - rest) / nx
        x2 = g.x + (half - rest) / nx
        lo = np.maximum(lo, np.minimum(x1, x2))
        hi = np.minimum(hi, np.maximum(x1, x2))
    return lo, hi


def _count_lattice(lo, hi, x0: float, dx: float, n: int) -> np.ndarray:
    """Number of sample columns ``x0 + (j + 0.5) dx`` (0 <= j < n) inside [lo, hi]."""
    with np.errstate(invalid="ignore"):
        jlo = np.ceil((lo - x0) / dx - 0.5)
        jhi = np.floor((hi - x0) / dx - 0.5)
    jlo = np.clip(np.nan_to_num(jlo, nan=n, posinf=n, neginf=0), 0, n)
    jhi = np.clip(np.nan_to_num(jhi, nan=-1, posinf=n - 1, neginf=-1), -1, n - 1)
    return np.maximum(jhi - jlo + 1, 0)


def _union_hull(a: GraspRect, b: GraspRect) -> tuple[float, float, float, float]:
    pts = np.array(corners(a) + corners(b))
    return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


def raster_iou_oracle(a: GraspRect, b: GraspRect, grid: int = 1024, method: str = "scanline") -> float:
    """IoU estimated by point-in-rectangle tests on a ``grid`` x ``grid`` lattice.

    The lattice covers the axis-aligned hull of both rectangles, one sample at
    each cell center. ``method="scanline"`` counts the inside samples of each
    lattice row in closed form from the row's covered interval; ``"brute"``
    tests every sample point and is kept to cross-check the scanline counts.
    """
    if grid < 64:
        raise ValueError("grid must be >= 64")
    x_lo, y_lo, x_hi, y_hi = _union_hull(a, b)
    dx = (x_hi - x_lo) / grid
    dy = (y_hi - y_lo) / grid
    ys = y_lo + (np.arange(grid) + 0.5) * dy

    if method == "brute":
        xs = x_lo + (np.arange(grid) + 0.5) * dx
        px, py = np.meshgrid(xs, ys)
        ia = _inside(a, px, py)
        ib = _inside(b, px, py)
        n_int = np.count_nonzero(ia & ib)
        n_uni = np.count_nonzero(ia | ib)
    elif method == "scanline":
        alo, ahi = _row_interval(a, ys)
        blo, bhi = _row_interval(b, ys)
        na = _count_lattice(alo, ahi, x_lo, dx, grid)
        nb = _count_lattice(blo, bhi, x_lo, dx, grid)
        ni = _count_lattice(np.maximum(alo, blo), np.minimum(ahi, bhi), x_lo, dx, grid)
        n_int = ni.sum()
        n_uni = na.sum() + nb.sum() - n_int
    else:
        raise ValueError(f"unknown method {method!r}")
    if n_uni == 0:
        return 0.0
    return float(n_int) / float(n_uni)


def _inside(g: GraspRect, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    t = math.radians(g.theta)
    c, s = math.cos(t), math.sin(t)
    dx, dy = px - g.x, py - g.y
    return (np.abs(dx * c + dy * s) <= 0.5 * g.w) & (np.abs(-dx * s + dy * c) <= 0.5 * g.h)
