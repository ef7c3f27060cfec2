import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcot_grasp.geometry import (
    AxisBox,
    GraspRect,
    angle_delta,
    axis_iou,
    clip_convex,
    corners,
    grasp_success,
    polygon_intersection_area,
    raster_iou_oracle,
    rect_iou,
    shoelace_area,
)

# Reference IoUs computed once with shapely polygons (not a runtime dependency).
SHAPELY_IOU = [
    ((36.22, 25.14, 10.19, 19.99, 179.24), (23.41, 21.89, 7.62, 11.19, 30.53), 0.0),
    ((34.13, 34.8, 6.11, 15.31, 0.83), (31.16, 43.41, 19.99, 15.94, 58.56), 0.153034754),
    ((24.95, 30.63, 9.56, 21.5, 38.37), (26.58, 39.37, 9.37, 9.36, 12.76), 0.085542725),
    ((31.21, 26.34, 21.78, 9.73, 139.28), (31.69, 31.23, 23.3, 21.96, 14.23), 0.3345686174),
    ((25.88, 24.43, 22.11, 15.08, 66.9), (40.01, 28.37, 17.63, 8.57, 4.3), 0.0826495399),
    ((36.71, 28.08, 10.84, 9.52, 45.24), (33.68, 28.01, 12.51, 8.04, 90.93), 0.4466505389),
    ((34.05, 30.09, 12.07, 22.88, 8.68), (27.83, 32.45, 15.97, 4.85, 43.43), 0.1281131421),
    ((21.3, 20.19, 10.44, 12.14, 154.65), (20.32, 37.19, 13.14, 15.78, 26.35), 1.96559e-05),
]

coord = st.floats(0, 64)
extent = st.floats(2, 30)
angle = st.floats(0, 180, exclude_max=True)
rects = st.builds(GraspRect, coord, coord, extent, extent, angle)


def _set(pts, nd=9):
    return {(round(x, nd) + 0.0, round(y, nd) + 0.0) for x, y in pts}


# --- construction ----------------------------------------------------------


@pytest.mark.parametrize("bad", [dict(w=0), dict(h=-1), dict(x=math.nan), dict(theta=math.inf)])
def test_grasp_rect_rejects_invalid(bad):
    kw = dict(x=1, y=1, w=2, h=2, theta=0) | bad
    with pytest.raises(ValueError):
        GraspRect(**kw)


@pytest.mark.parametrize("raw,norm", [(180, 0), (-30, 150), (725, 5), (-1e-18, 0)])
def test_theta_normalized(raw, norm):
    assert GraspRect(0, 0, 1, 1, raw).theta == pytest.approx(norm)


def test_axis_box_rejects_inverted():
    with pytest.raises(ValueError):
        AxisBox(2, 0, 1, 1)
    with pytest.raises(ValueError):
        AxisBox(0, 0, 1, 0)


# --- corners ---------------------------------------------------------------


def test_corners_square():
    assert _set(corners(GraspRect(0, 0, 2, 2, 0))) == {(1, 1), (-1, 1), (-1, -1), (1, -1)}


def test_corners_rotated_hull():
    pts = np.array(corners(GraspRect(5, 5, 4, 2, 90)))
    assert pts[:, 0].min() == pytest.approx(4)
    assert pts[:, 0].max() == pytest.approx(6)
    assert pts[:, 1].min() == pytest.approx(3)
    assert pts[:, 1].max() == pytest.approx(7)


@given(rects)
def test_corners_ccw_and_area(g):
    assert shoelace_area(corners(g)) == pytest.approx(g.w * g.h, rel=1e-9)


@given(coord, coord, extent, extent, angle)
def test_corners_half_turn(x, y, w, h, t):
    a = corners(GraspRect(x, y, w, h, t))
    b = corners(GraspRect(x, y, w, h, t + 180))
    assert _set(a, 6) == _set(b, 6)


# --- clipping and IoU -----------------------------------------------------


def test_unit_square_intersections():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert polygon_intersection_area(sq, sq) == pytest.approx(1.0)
    far = [(2, 0), (3, 0), (3, 1), (2, 1)]
    assert polygon_intersection_area(sq, far) == 0.0
    a = [(0, 0), (2, 0), (2, 2), (0, 2)]
    b = [(1, 1), (3, 1), (3, 3), (1, 3)]
    assert shoelace_area(clip_convex(a, b)) == pytest.approx(1.0)


def test_rect_iou_examples():
    g = GraspRect(10, 10, 6, 3, 33)
    assert rect_iou(g, g) == pytest.approx(1.0)
    assert rect_iou(GraspRect(0, 0, 4, 2, 0), GraspRect(1, 0, 4, 2, 0)) == pytest.approx(0.6)
    sq = GraspRect(3, 3, 5, 5, 10)
    assert rect_iou(sq, GraspRect(3, 3, 5, 5, 100)) == pytest.approx(1.0)


@pytest.mark.parametrize("a,b,ref", SHAPELY_IOU)
def test_rect_iou_matches_frozen_reference(a, b, ref):
    assert rect_iou(GraspRect(*a), GraspRect(*b)) == pytest.approx(ref, abs=1e-9)


@given(rects, rects)
def test_rect_iou_symmetric_and_bounded(a, b):
    ab, ba = rect_iou(a, b), rect_iou(b, a)
    assert abs(ab - ba) <= 1e-12
    assert 0.0 <= ab <= 1.0
    inter = polygon_intersection_area(corners(a), corners(b))
    assert inter <= min(a.area, b.area) + 1e-9


@given(rects, rects, st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 360), st.floats(0.25, 4))
def test_rect_iou_similarity_invariant(a, b, tx, ty, rot, scale):
    r = math.radians(rot)
    c, s = math.cos(r), math.sin(r)

    def move(g):
        x = scale * (c * g.x - s * g.y) + tx
        y = scale * (s * g.x + c * g.y) + ty
        return GraspRect(x, y, g.w * scale, g.h * scale, g.theta + rot)

    assert rect_iou(move(a), move(b)) == pytest.approx(rect_iou(a, b), abs=1e-9)


def test_shared_edge_no_sliver_loss():
    a = GraspRect(0, 0, 4, 2, 0)
    b = GraspRect(0, 0, 4, 2, 180 - 1e-13)
    assert rect_iou(a, b) == pytest.approx(1.0, abs=1e-9)


def test_axis_iou():
    b = AxisBox(0, 0, 2, 2)
    assert axis_iou(b, b) == 1.0
    assert axis_iou(b, AxisBox(3, 3, 4, 4)) == 0.0
    assert axis_iou(b, AxisBox(1, 1, 3, 3)) == pytest.approx(1 / 7)


# --- angle and success ----------------------------------------------------


@pytest.mark.parametrize("t1,t2,d", [(10, 170, 20), (42, 42, 0), (0, 90, 90), (5, 365, 0), (-10, 10, 20)])
def test_angle_delta_examples(t1, t2, d):
    assert angle_delta(t1, t2) == pytest.approx(d)


@given(st.floats(-720, 720), st.floats(-720, 720), st.integers(-4, 4))
def test_angle_delta_properties(t1, t2, k):
    d = angle_delta(t1, t2)
    assert 0.0 <= d <= 90.0
    assert d == pytest.approx(angle_delta(t2, t1), abs=1e-9)
    assert angle_delta(t1, t1 + 180 * k) == pytest.approx(0.0, abs=1e-9)


def test_success_boundaries():
    truth = GraspRect(0, 0, 4, 2, 0)
    # Two 4x2 rects offset by 2.4 along w: inter 1.6*2 = 3.2, union 12.8 -> 0.25 exactly.
    shifted = GraspRect(2.4, 0, 4, 2, 0)
    assert rect_iou(shifted, truth) == pytest.approx(0.25, abs=1e-12)
    assert not grasp_success(shifted, [truth])
    assert grasp_success(GraspRect(2.39, 0, 4, 2, 0), [truth])

    sq = GraspRect(10, 10, 6, 6, 0)
    assert grasp_success(GraspRect(10, 10, 6, 6, 30), [sq])
    assert not grasp_success(GraspRect(10, 10, 6, 6, 30.001), [sq])


def test_success_examples():
    truth = GraspRect(5, 5, 8, 3, 20)
    assert grasp_success(truth, [GraspRect(40, 40, 5, 5, 0), truth])
    near = GraspRect(0, 0, 4, 2, 0)
    pred = GraspRect(1, 0, 4, 2, 45)
    assert not grasp_success(pred, [near])
    with pytest.raises(ValueError, match="no ground truth"):
        grasp_success(truth, [])


# --- rasterization oracle -------------------------------------------------


def test_oracle_trivial_cases():
    g = GraspRect(20, 20, 10, 4, 17)
    assert raster_iou_oracle(g, g) == 1.0
    assert raster_iou_oracle(g, GraspRect(50, 50, 3, 3, 0)) == 0.0
    with pytest.raises(ValueError):
        raster_iou_oracle(g, g, grid=32)


@pytest.mark.parametrize("a,b,ref", SHAPELY_IOU)
def test_oracle_matches_frozen_reference(a, b, ref):
    assert raster_iou_oracle(GraspRect(*a), GraspRect(*b)) == pytest.approx(ref, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(rects, rects)
def test_oracle_scanline_equals_brute(a, b):
    assert raster_iou_oracle(a, b, grid=256, method="scanline") == pytest.approx(
        raster_iou_oracle(a, b, grid=256, method="brute"), abs=1e-12
    )


@settings(max_examples=200, deadline=None)
@given(rects, rects)
def test_oracle_agrees_with_clipping(a, b):
    assert abs(rect_iou(a, b) - raster_iou_oracle(a, b)) <= 0.02
