"""Box overlap and pinhole projection of 3D boxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .records import Box3D, DetectionBox


def iou(a: DetectionBox, b: DetectionBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: Sequence[DetectionBox], boxes_b: Sequence[DetectionBox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: ``intrinsic`` is 3x3, extrinsic maps world to camera
    as ``x_cam = rotation @ x_world + translation``."""

    intrinsic: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        k = np.asarray(self.intrinsic, dtype=float).reshape(3, 3)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (k[0, 0] > 0 and k[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        object.__setattr__(self, "intrinsic", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_params(cls, fx, fy, cx, cy, rotation=None, translation=None,
                    width=1920, height=1080) -> CameraModel:
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        rotation = np.eye(3) if rotation is None else rotation
        translation = np.zeros(3) if translation is None else translation
        return cls(k, rotation, translation, width, height)

    @property
    def fx(self) -> float:
        return float(self.intrinsic[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsic[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsic[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsic[1, 2])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points (N, 3) with z > 0 to pixel coordinates (N, 2)."""
        p = points_cam @ self.intrinsic.T
        return p[:, :2] / p[:, 2:3]


def box3d_corners(box: Box3D) -> np.ndarray:
    """The 8 world-frame corners, shape (8, 3)."""
    dx, dy, dz = box.length / 2, box.width / 2, box.height / 2
    local = np.array([[sx * dx, sy * dy, sz * dz]
                      for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(box.center)


def project_box3d(box: Box3D, cam: CameraModel) -> DetectionBox | None:
    """Bounding rectangle of the projected corners, clipped to the image.

    Corners behind the camera are dropped; if none remain, or the clipped
    rectangle is empty, returns None.
    """
    pts = cam.to_camera(box3d_corners(box))
    pts = pts[pts[:, 2] > 0]
    if len(pts) == 0:
        return None
    uv = cam.project(pts)
    x1 = max(float(uv[:, 0].min()), 0.0)
    y1 = max(float(uv[:, 1].min()), 0.0)
    x2 = min(float(uv[:, 0].max()), float(cam.width))
    y2 = min(float(uv[:, 1].max()), float(cam.height))
    if x2 <= x1 or y2 <= y1:
        return None
    return DetectionBox(x1, y1, x2 - x1, y2 - y1, box.class_label, box.confidence)
