"""Line-delimited JSON record formats and atomic file output."""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IngestError
from .geometry import CameraModel
from .records import AV, LABELS, SCHEMAS, VIDEO, Box3D, ClassLabel, DetectionBox, PredictionRecord


def _num(obj, key, line, kind=float):
    try:
        v = obj[key]
    except KeyError:
        raise IngestError(f"missing field {key!r}", line) from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise IngestError(f"field {key!r} must be a number", line)
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise IngestError(f"field {key!r} must be an integer", line)
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise IngestError(f"field {key!r} must be finite", line)
    return v


def _str(obj, key, line, default=None):
    v = obj.get(key, default)
    if v is None:
        raise IngestError(f"missing field {key!r}", line)
    if not isinstance(v, str):
        raise IngestError(f"field {key!r} must be a string", line)
    return v


def box_from_dict(obj: dict, line: int | None = None) -> DetectionBox:
    if not isinstance(obj, dict):
        raise IngestError("box must be an object", line)
    attrs = obj.get("attrs", {})
    if not isinstance(attrs, dict) or not all(isinstance(v, str) for v in attrs.values()):
        raise IngestError("box attrs must map strings to strings", line)
    try:
        return DetectionBox(_num(obj, "x", line), _num(obj, "y", line), _num(obj, "w", line),
                            _num(obj, "h", line), _str(obj, "class", line), _num(obj, "conf", line),
                            dict(attrs))
    except ValueError as exc:
        if isinstance(exc, IngestError):
            raise
        raise IngestError(str(exc), line) from None


def box_to_dict(box: DetectionBox) -> dict:
    out = {"x": box.x, "y": box.y, "w": box.w, "h": box.h, "class": box.class_label, "conf": box.confidence}
    if box.attrs:
        out["attrs"] = dict(box.attrs)
    return out


def box3d_from_dict(obj: dict, line: int | None = None) -> Box3D:
    if not isinstance(obj, dict):
        raise IngestError("3D box must be an object", line)
    try:
        return Box3D((_num(obj, "cx", line), _num(obj, "cy", line), _num(obj, "cz", line)),
                     _num(obj, "l", line), _num(obj, "w", line), _num(obj, "h", line),
                     _num(obj, "yaw", line), _str(obj, "class", line), _num(obj, "conf", line))
    except ValueError as exc:
        if isinstance(exc, IngestError):
            raise
        raise IngestError(str(exc), line) from None


def box3d_to_dict(box: Box3D) -> dict:
    cx, cy, cz = box.center
    return {"cx": cx, "cy": cy, "cz": cz, "l": box.length, "w": box.width, "h": box.height,
            "yaw": box.yaw, "class": box.class_label, "conf": box.confidence}


def record_from_dict(obj, schema: str, line: int | None = None) -> PredictionRecord:
    if not isinstance(obj, dict):
        raise IngestError("record must be a JSON object", line)
    pid = _str(obj, "point_id", line)
    ref = _str(obj, "input_ref", line, default="")
    if schema == LABELS:
        try:
            label = ClassLabel(_str(obj, "class", line), _num(obj, "conf", line))
        except IngestError:
            raise
        except ValueError as exc:
            raise IngestError(str(exc), line) from None
        return PredictionRecord(pid, _num(obj, "t", line), label=label, input_ref=ref)
    if schema not in (VIDEO, AV):
        raise ValueError(f"unknown schema {schema!r}")
    frame = _num(obj, "frame", line, int)
    fps = _num(obj, "fps", line)
    if fps <= 0:
        raise IngestError("fps must be positive", line)
    boxes = obj.get("boxes")
    if not isinstance(boxes, list):
        raise IngestError("field 'boxes' must be a list", line)
    boxes3d = None
    if schema == AV:
        raw = obj.get("boxes3d")
        if not isinstance(raw, list):
            raise IngestError("field 'boxes3d' must be a list", line)
        boxes3d = [box3d_from_dict(b, line) for b in raw]
    return PredictionRecord.from_frame(pid, frame, fps, [box_from_dict(b, line) for b in boxes],
                                       boxes3d, input_ref=ref)


def record_to_dict(rec: PredictionRecord, schema: str | None = None) -> dict:
    schema = schema or rec.kind
    if schema == LABELS:
        out = {"point_id": rec.point_id, "t": rec.timestamp, "class": rec.label.class_label,
               "conf": rec.label.confidence}
    else:
        out = {"point_id": rec.point_id, "frame": rec.frame, "fps": rec.fps,
               "boxes": [box_to_dict(b) for b in rec.boxes]}
        if schema == AV:
            out["boxes3d"] = [box3d_to_dict(b) for b in rec.boxes3d or ()]
    if rec.input_ref:
        out["input_ref"] = rec.input_ref
    return out


def parse_lines(lines: Iterable[str], schema: str) -> list[PredictionRecord]:
    """Parse and validate a line-delimited stream; blank lines are skipped."""
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    out: list[PredictionRecord] = []
    seen: set[str] = set()
    for no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IngestError(f"invalid JSON ({exc.msg})", no) from None
        rec = record_from_dict(obj, schema, no)
        if rec.point_id in seen:
            raise IngestError(f"duplicate point_id {rec.point_id!r}", no)
        seen.add(rec.point_id)
        if out:
            prev = out[-1]
            if rec.timestamp < prev.timestamp:
                raise IngestError(f"timestamp goes backwards ({rec.timestamp} < {prev.timestamp})", no)
            if schema != LABELS and rec.frame <= prev.frame:
                raise IngestError(f"frame {rec.frame} does not follow frame {prev.frame}", no)
        out.append(rec)
    return out


def ingest(path: str | os.PathLike, schema: str) -> list[PredictionRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, schema)


def serialize(stream: Sequence[PredictionRecord], schema: str | None = None) -> str:
    return "".join(json.dumps(record_to_dict(r, schema)) + "\n" for r in stream)


def load_camera(path: str | os.PathLike) -> CameraModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rot = data.get("rotation", [1, 0, 0, 0, 1, 0, 0, 0, 1])
        trans = data.get("translation", [0, 0, 0])
        if len(rot) != 9 or len(trans) != 3:
            raise ValueError("rotation needs 9 values and translation 3")
        return CameraModel.from_params(data["fx"], data["fy"], data["cx"], data["cy"],
                                       [rot[0:3], rot[3:6], rot[6:9]], trans,
                                       data["width"], data["height"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, KeyError):
            exc = f"missing field {exc.args[0]!r}"
        raise IngestError(f"bad camera file {path}: {exc}") from None


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, data) -> None:
    atomic_write(path, json.dumps(data, indent=2, sort_keys=False) + "\n")
