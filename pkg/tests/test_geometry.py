from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modelassert.geometry import CameraModel, box3d_corners, iou, project_box3d
from modelassert.records import Box3D, DetectionBox
from oracles import box_iou


def test_iou_examples():
    a = DetectionBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, DetectionBox(5, 0, 10, 10)) == pytest.approx(50 / 150, rel=1e-12)
    assert iou(a, DetectionBox(20, 20, 5, 5)) == 0.0
    assert iou(a, DetectionBox(10, 0, 5, 5)) == 0.0  # touching edges


coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.5, 40, allow_nan=False)


@given(coord, coord, size, size, coord, coord, size, size)
@settings(max_examples=300, deadline=None)
def test_iou_matches_oracle_and_is_symmetric(x1, y1, w1, h1, x2, y2, w2, h2):
    a, b = DetectionBox(x1, y1, w1, h1), DetectionBox(x2, y2, w2, h2)
    v = iou(a, b)
    assert v == pytest.approx(box_iou((x1, y1, w1, h1), (x2, y2, w2, h2)), abs=1e-12)
    assert v == pytest.approx(iou(b, a), abs=1e-15)
    assert 0.0 <= v <= 1.0


def cam100(**kw):
    return CameraModel.from_params(100, 100, 50, 50, width=100, height=100, **kw)


def test_on_axis_unit_cube():
    # world == camera frame; z is depth
    box = Box3D((0.0, 0.0, 10.0), 1.0, 1.0, 1.0)
    r = project_box3d(box, cam100())
    assert r.x + r.w / 2 == pytest.approx(50, rel=1e-9)
    assert r.y + r.h / 2 == pytest.approx(50, rel=1e-9)
    # nearest face at z=9.5 spans +-0.5 -> 100*0.5/9.5 pixels
    assert r.w == pytest.approx(2 * 100 * 0.5 / 9.5, rel=1e-9)


def test_behind_camera_is_none():
    assert project_box3d(Box3D((0.0, 0.0, -10.0), 1.0, 1.0, 1.0), cam100()) is None


def test_off_axis_cube_by_hand():
    box = Box3D((1.0, -0.5, 8.0), 2.0, 1.0, 1.0)  # length along x, width along y, height along z
    xs, ys = [], []
    for dx in (-1.0, 1.0):
        for dy in (-0.5, 0.5):
            for dz in (-0.5, 0.5):
                X, Y, Z = 1.0 + dx, -0.5 + dy, 8.0 + dz
                xs.append(100 * X / Z + 50)
                ys.append(100 * Y / Z + 50)
    r = project_box3d(box, cam100())
    assert r.x == pytest.approx(min(xs), rel=1e-9)
    assert r.y == pytest.approx(min(ys), rel=1e-9)
    assert r.x2 == pytest.approx(max(xs), rel=1e-9)
    assert r.y2 == pytest.approx(max(ys), rel=1e-9)


def test_corners_follow_yaw():
    c = box3d_corners(Box3D((0.0, 0.0, 0.0), 2.0, 1.0, 1.0, yaw=math.pi / 2))
    assert np.allclose(np.sort(np.abs(c[:, 0])), 0.5)
    assert np.allclose(np.sort(np.abs(c[:, 1])), 1.0)


def test_clipping_and_empty():
    cam = cam100()
    # x and y extents of +-2 at depth 1.5 overflow the 100x100 image on every side
    r = project_box3d(Box3D((0.0, 0.0, 2.0), 4.0, 4.0, 1.0), cam)
    assert (r.x, r.y, r.x2, r.y2) == (0, 0, 100, 100)
    # only the right half overflows
    r = project_box3d(Box3D((5.0, 0.0, 10.0), 1.0, 1.0, 1.0), cam)
    assert r.x == pytest.approx(100 * 4.5 / 10.5 + 50) and r.x2 == 100
    assert project_box3d(Box3D((100.0, 0.0, 10.0), 1.0, 1.0, 1.0), cam) is None


@given(st.floats(0.2, 5.0), st.floats(3, 6), st.floats(3, 6), st.floats(5, 30), st.floats(-3, 3))
@settings(max_examples=200, deadline=None)
def test_focal_scaling_invariance(s, x, y, z, yaw):
    # principal point at the origin and the box in the positive quadrant: nothing clips
    box = Box3D((x, y, z), 1.0, 0.8, 1.2, yaw=yaw)
    big = 10 ** 7
    a = project_box3d(box, CameraModel.from_params(100, 80, 0, 0, width=big, height=big))
    b = project_box3d(box, CameraModel.from_params(100 * s, 80 * s, 0, 0, width=big, height=big))
    for got, want in ((b.x, s * a.x), (b.y, s * a.y), (b.w, s * a.w), (b.h, s * a.h)):
        assert got == pytest.approx(want, rel=1e-9)


def test_extrinsics_translate():
    box = Box3D((0.0, 0.0, 0.0), 1.0, 1.0, 1.0)
    cam = cam100(translation=[0.0, 0.0, 10.0])
    r = project_box3d(box, cam)
    assert r.x + r.w / 2 == pytest.approx(50, rel=1e-9)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel.from_params(0, 100, 50, 50)
    with pytest.raises(ValueError):
        CameraModel.from_params(100, 100, 50, 50, rotation=[[1, 0, 0], [0, 1, 0], [0, 0, 2]])
