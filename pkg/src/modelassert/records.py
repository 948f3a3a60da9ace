"""Model outputs and the timestamped records that carry them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .errors import StreamError

VIDEO = "video-detections"
LABELS = "timeseries-labels"
AV = "av-paired"
SCHEMAS = (VIDEO, LABELS, AV)


@dataclass(frozen=True)
class DetectionBox:
    """Axis-aligned 2D box; (x, y) is the top-left corner in pixels.

    ``attrs`` holds extra per-output key/value attributes (e.g. identity,
    gender, scene) for consistency checks that need more than the class.
    """

    x: float
    y: float
    w: float
    h: float
    class_label: str = "object"
    confidence: float = 1.0
    attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width/height must be positive, got w={self.w} h={self.h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Box3D:
    """3D box in world coordinates (z up). ``length`` runs along the heading,
    ``yaw`` rotates about the vertical axis."""

    center: tuple[float, float, float]
    length: float
    width: float
    height: float
    yaw: float = 0.0
    class_label: str = "object"
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError("3D box dimensions must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class ClassLabel:
    class_label: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PredictionRecord:
    """One model input reference plus its outputs.

    Exactly one output variant is populated: ``boxes`` (video), ``label``
    (time series) or ``boxes`` together with ``boxes3d`` (AV paired).
    """

    point_id: str
    timestamp: float
    boxes: tuple[DetectionBox, ...] | None = None
    label: ClassLabel | None = None
    boxes3d: tuple[Box3D, ...] | None = None
    frame: int | None = None
    fps: float | None = None
    input_ref: str = ""

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError(f"record {self.point_id}: non-finite timestamp")
        if (self.boxes is None) == (self.label is None):
            raise ValueError(f"record {self.point_id}: exactly one of boxes/label must be set")
        if self.boxes3d is not None and self.boxes is None:
            raise ValueError(f"record {self.point_id}: boxes3d requires camera boxes")
        if self.boxes is not None:
            object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.boxes3d is not None:
            object.__setattr__(self, "boxes3d", tuple(self.boxes3d))

    @classmethod
    def from_frame(cls, point_id: str, frame: int, fps: float, boxes: Sequence[DetectionBox],
                   boxes3d: Sequence[Box3D] | None = None, input_ref: str = "") -> PredictionRecord:
        return cls(point_id=point_id, timestamp=frame / fps, boxes=tuple(boxes),
                   boxes3d=None if boxes3d is None else tuple(boxes3d),
                   frame=frame, fps=fps, input_ref=input_ref)

    @property
    def kind(self) -> str:
        if self.label is not None:
            return LABELS
        return VIDEO if self.boxes3d is None else AV

    @property
    def outputs(self) -> list[Any]:
        """The outputs consistency checks run over (camera boxes for AV)."""
        if self.label is not None:
            return [self.label]
        return list(self.boxes)

    def with_outputs(self, outputs: Sequence[Any]) -> PredictionRecord:
        if self.label is not None:
            if len(outputs) != 1:
                raise ValueError(f"record {self.point_id}: a label record holds exactly one output")
            return replace(self, label=outputs[0])
        return replace(self, boxes=tuple(outputs))


def stream_kind(stream: Sequence[PredictionRecord]) -> str | None:
    """Common output variant of a stream; raises on a mixed stream."""
    kinds = {r.kind for r in stream}
    if len(kinds) > 1:
        raise StreamError(f"mixed output variants in one stream: {sorted(kinds)}")
    return kinds.pop() if kinds else None


def check_stream(stream: Sequence[PredictionRecord]) -> str | None:
    """Validate ordering, id uniqueness and variant homogeneity."""
    kind = stream_kind(stream)
    seen = set()
    prev = -math.inf
    for pos, rec in enumerate(stream):
        if rec.timestamp < prev:
            raise StreamError(f"stream not sorted by time at position {pos} ({rec.point_id})")
        prev = rec.timestamp
        if rec.point_id in seen:
            raise StreamError(f"duplicate point_id {rec.point_id!r}")
        seen.add(rec.point_id)
    return kind


def get_attribute(output: Any, key: str) -> str | None:
    if key == "class":
        return output.class_label
    attrs = getattr(output, "attrs", None)
    if attrs is None:
        return None
    return attrs.get(key)


def set_attribute(output: Any, key: str, value: str) -> Any:
    """Return a copy of ``output`` with one attribute replaced."""
    if key == "class":
        return replace(output, class_label=value)
    if not hasattr(output, "attrs"):
        raise ValueError(f"{type(output).__name__} has no attribute {key!r}")
    attrs = dict(output.attrs)
    attrs[key] = value
    return replace(output, attrs=attrs)
