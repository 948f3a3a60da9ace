"""Concrete assertions for video analytics, AV sensor fusion, ECG rhythm
classification and TV-news face attributes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .consistency import (MODIFY, SHORT, FLICKER, ConsistencyConfig, CorrectionEdit,
                          IdentifierGroup, Member, TemporalViolation, attribute_severities,
                          check_attribute_consistency, check_groups, group_items,
                          interpolate_boxes, propose_corrections, temporal_severities)
from .engine import (CUSTOM, GENERATED_ATTRIBUTE, GENERATED_TEMPORAL, AssertionDescriptor,
                     AssertionRegistry)
from .geometry import CameraModel, iou, iou_matrix, project_box3d
from .records import Box3D, DetectionBox, PredictionRecord
from .tracks import Track, tracks_from_stream

DEFAULT_MULTIBOX_IOU = 0.3
DEFAULT_AGREE_IOU = 0.1


def multibox(boxes: Sequence[DetectionBox], overlap_iou: float = DEFAULT_MULTIBOX_IOU,
             severity: str = "count") -> float:
    """Triples of boxes whose pairwise IoUs all reach ``overlap_iou``.

    ``severity="count"`` returns the number of such triples;
    ``"max_confidence"`` returns the highest confidence among boxes in any.
    """
    if not 0 < overlap_iou <= 1:
        raise ValueError("overlap_iou must lie in (0, 1]")
    if len(boxes) < 3:
        return 0.0
    hit = iou_matrix(boxes, boxes) >= overlap_iou
    count = 0
    conf = 0.0
    for a, b, c in combinations(range(len(boxes)), 3):
        if hit[a, b] and hit[a, c] and hit[b, c]:
            count += 1
            conf = max(conf, boxes[a].confidence, boxes[b].confidence, boxes[c].confidence)
    if severity == "count":
        return float(count)
    if severity == "max_confidence":
        return conf
    raise ValueError(f"unknown severity mode {severity!r}")


def agree(boxes3d: Sequence[Box3D], camera_boxes: Sequence[DetectionBox], cam: CameraModel,
          min_iou: float = DEFAULT_AGREE_IOU) -> float:
    """Projected 3D boxes with no camera box overlapping at ``min_iou``.

    Boxes that do not project into the image are skipped.
    """
    if not 0 < min_iou <= 1:
        raise ValueError("min_iou must lie in (0, 1]")
    failures = 0
    for box in boxes3d:
        proj = project_box3d(box, cam)
        if proj is None:
            continue
        if max((iou(proj, b) for b in camera_boxes), default=0.0) < min_iou:
            failures += 1
    return float(failures)


# -- flicker / appear ------------------------------------------------------

@dataclass
class FlickerResult:
    tracks: list[Track]
    severities: dict[str, np.ndarray]
    attribute_violations: list
    temporal_violations: list[TemporalViolation]
    edits: list[CorrectionEdit]
    uncorrectable: list

    def of(self, pattern: str) -> list[TemporalViolation]:
        return [v for v in self.temporal_violations if v.pattern == pattern]


def _stream_fps(stream: Sequence[PredictionRecord]) -> float | None:
    if stream and stream[0].fps:
        return stream[0].fps
    if len(stream) > 1:
        dt = np.diff([r.timestamp for r in stream])
        dt = dt[dt > 0]
        if len(dt):
            return 1.0 / float(np.median(dt))
    return None


def bridge_frames(t_persist: float, fps: float | None) -> int:
    """Largest count of missing frames whose gap is still shorter than
    ``t_persist``; tracks are kept alive across such gaps."""
    if not fps or t_persist <= 0:
        return 0
    return max(0, math.ceil(t_persist * fps) - 2)


def flicker_appear(stream: Sequence[PredictionRecord], match_iou: float = 0.5,
                   t_persist: float = 1.0, weak_label_fn: Callable | None = interpolate_boxes,
                   class_gated: bool = False, max_gap: int | None = None,
                   temporal_mode: str = "both") -> FlickerResult:
    """Track boxes, then run the consistency checks with the track id as the
    identifier and the class as an attribute.

    Tracking is not class-gated by default so a class change along a track
    can fire the attribute check.
    """
    stream = list(stream)
    if max_gap is None:
        max_gap = bridge_frames(t_persist, _stream_fps(stream))
    tracks = tracks_from_stream(stream, match_iou, max_gap=max_gap, class_gated=class_gated)
    pos = {r.point_id: i for i, r in enumerate(stream)}
    items = []
    for t in tracks:
        for m in t.members:
            items.append((t.track_id, Member(m.point_id, m.index, {"class": m.box.class_label},
                                             stream[pos[m.point_id]].timestamp, pos[m.point_id], m.box)))
    items.sort(key=lambda it: (it[1].position, it[1].index))
    groups = group_items(items)
    config = ConsistencyConfig(id_fn=lambda o: None, attrs_fn=lambda o: [("class", o.class_label)],
                               t_persist=t_persist, weak_label_fn=weak_label_fn, attr_keys=("class",),
                               temporal_mode=temporal_mode, name="flicker")
    res = check_groups(groups, stream, config)
    n = len(stream)
    sev = {
        "flicker": temporal_severities([v for v in res.temporal_violations if v.pattern == FLICKER], n),
        "appear": temporal_severities([v for v in res.temporal_violations if v.pattern == SHORT], n),
        "class": attribute_severities(res.attribute_violations, stream),
    }
    return FlickerResult(tracks, sev, res.attribute_violations, res.temporal_violations,
                         res.edits, res.uncorrectable)


# -- ECG -------------------------------------------------------------------

@dataclass(frozen=True)
class RunViolation:
    """A class run shorter than the persistence threshold between two others."""

    label: str
    before: str
    after: str
    start: float
    end: float
    first: int
    last: int

    @property
    def correctable(self) -> bool:
        return self.before == self.after


@dataclass
class EcgResult:
    severities: np.ndarray
    violations: list[RunViolation]
    edits: list[CorrectionEdit]


def label_runs(labels: Sequence[str]) -> list[tuple[str, int, int]]:
    """Maximal runs as (label, first position, last position)."""
    runs = []
    for i, lab in enumerate(labels):
        if runs and runs[-1][0] == lab:
            runs[-1][2] = i
        else:
            runs.append([lab, i, i])
    return [tuple(r) for r in runs]


def _short_runs(labels, times, t_persist):
    runs = label_runs(labels)
    out = []
    for k in range(1, len(runs) - 1):
        lab, a, b = runs[k]
        dur = times[runs[k + 1][1]] - times[a]
        if dur < t_persist:
            out.append(RunViolation(lab, runs[k - 1][0], runs[k + 1][0], times[a],
                                    times[runs[k + 1][1]], a, b))
    return out


def ecg_window(stream: Sequence[PredictionRecord], t_persist: float = 30.0) -> EcgResult:
    """Flag rhythm classes that hold for less than ``t_persist`` seconds
    between two other runs (A -> B -> A style flips).

    A run lasts from its first record until the next run starts. Runs with
    equal flanking classes are relabelled to that class, shortest first,
    repeating until no such run remains; runs with differing flanks are
    reported without an edit.
    """
    stream = list(stream)
    labels = [r.label.class_label for r in stream]
    times = [r.timestamp for r in stream]
    violations = _short_runs(labels, times, t_persist)
    sev = np.zeros(len(stream))
    for v in violations:
        sev[v.first: v.last + 1] += 1

    cur = list(labels)
    while True:
        cands = [v for v in _short_runs(cur, times, t_persist) if v.correctable]
        if not cands:
            break
        v = min(cands, key=lambda c: (c.end - c.start, c.first))
        cur[v.first: v.last + 1] = [v.before] * (v.last - v.first + 1)

    owner = {}
    for v in violations:
        for p in range(v.first, v.last + 1):
            owner[p] = v
    edits = [CorrectionEdit(MODIFY, stream[p].point_id, 0, key="class", value=cur[p],
                            time=times[p], source=owner.get(p))
             for p in range(len(stream)) if cur[p] != labels[p]]
    return EcgResult(sev, violations, edits)


# -- TV news ---------------------------------------------------------------

NEWS_KEYS = ("identity", "gender", "hair")


@dataclass
class NewsResult:
    groups: list[IdentifierGroup]
    violations: list
    edits: list[CorrectionEdit]


def face_clusters(stream: Sequence[PredictionRecord], match_iou: float = 0.5,
                  scene_key: str = "scene") -> list[tuple[tuple[str, int], Member]]:
    """(identifier, member) for every face; identifier is (scene, cluster)
    where clusters join faces transitively overlapping at ``match_iou``."""
    faces = []
    for pos, rec in enumerate(stream):
        for j, box in enumerate(rec.boxes):
            faces.append((box.attrs.get(scene_key, ""), Member(rec.point_id, j, dict(box.attrs),
                                                              rec.timestamp, pos, box)))
    parent = list(range(len(faces)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_scene: dict[str, list[int]] = {}
    for i, (scene, _) in enumerate(faces):
        by_scene.setdefault(scene, []).append(i)
    for idxs in by_scene.values():
        for a, b in combinations(idxs, 2):
            if iou(faces[a][1].output, faces[b][1].output) >= match_iou:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    cluster_no: dict[int, int] = {}
    per_scene: dict[str, int] = {}
    out = []
    for i, (scene, member) in enumerate(faces):
        root = find(i)
        if root not in cluster_no:
            cluster_no[root] = per_scene.get(scene, 0)
            per_scene[scene] = cluster_no[root] + 1
        out.append(((scene, cluster_no[root]), member))
    return out


def news_attribute_check(stream: Sequence[PredictionRecord], match_iou: float = 0.5,
                         keys: Sequence[str] = NEWS_KEYS, scene_key: str = "scene") -> NewsResult:
    stream = list(stream)
    groups = group_items(face_clusters(stream, match_iou, scene_key))
    violations = [v for k in keys for v in check_attribute_consistency(groups, k)]
    config = ConsistencyConfig(id_fn=lambda o: None, attr_keys=tuple(keys), name="news")
    edits, _ = propose_corrections(violations, groups, config, stream)
    return NewsResult(groups, violations, edits)


# -- registry wiring ---------------------------------------------------------

class _LastResult:
    """Share one whole-stream computation between the assertions built on it."""

    def __init__(self, fn):
        self.fn = fn
        self._key = None
        self._value = None

    def __call__(self, stream):
        if self._key is not stream:
            self._value = self.fn(stream)
            self._key = stream
        return self._value


def register_multibox(registry: AssertionRegistry, overlap_iou: float = DEFAULT_MULTIBOX_IOU,
                      severity: str = "count") -> int:
    return registry.register(AssertionDescriptor("multibox", 1, "records", CUSTOM),
                             lambda win: multibox(win[-1].boxes, overlap_iou, severity))


def register_agree(registry: AssertionRegistry, cam: CameraModel, min_iou: float = DEFAULT_AGREE_IOU) -> int:
    return registry.register(AssertionDescriptor("agree", 1, "records", CUSTOM),
                             lambda win: agree(win[-1].boxes3d or (), win[-1].boxes, cam, min_iou))


def register_flicker_appear(registry: AssertionRegistry, match_iou: float = 0.5, t_persist: float = 1.0,
                            class_check: bool = False, **kwargs) -> list[int]:
    shared = _LastResult(lambda s: flicker_appear(s, match_iou, t_persist, weak_label_fn=None, **kwargs))
    ids = [
        registry.register(AssertionDescriptor("flicker", t_persist, "seconds", GENERATED_TEMPORAL),
                          lambda s: shared(s).severities["flicker"]),
        registry.register(AssertionDescriptor("appear", t_persist, "seconds", GENERATED_TEMPORAL),
                          lambda s: shared(s).severities["appear"]),
    ]
    if class_check:
        ids.append(registry.register(AssertionDescriptor("class", 0, "records", GENERATED_ATTRIBUTE),
                                     lambda s: shared(s).severities["class"]))
    return ids


def register_ecg(registry: AssertionRegistry, t_persist: float = 30.0) -> int:
    return registry.register(AssertionDescriptor("ecg", t_persist, "seconds", GENERATED_TEMPORAL),
                             lambda s: ecg_window(s, t_persist).severities)
