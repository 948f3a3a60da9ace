"""Identifier assignment over detection streams (greedy IoU tracking)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from .errors import StreamError
from .geometry import iou
from .records import DetectionBox, PredictionRecord


class Interval(NamedTuple):
    """Presence interval in seconds; ``first``/``last`` are the inclusive
    indices (frame numbers or stream positions) it spans, -1 if unknown."""

    start: float
    end: float
    first: int = -1
    last: int = -1


class TrackMember(NamedTuple):
    frame: int
    point_id: str
    index: int
    box: DetectionBox


@dataclass
class Track:
    track_id: int
    class_label: str
    members: list[TrackMember] = field(default_factory=list)

    @property
    def frames(self) -> list[int]:
        return [m.frame for m in self.members]

    def __len__(self):
        return len(self.members)


def build_tracks(frames: Sequence[Sequence[DetectionBox]], match_iou: float = 0.5, *,
                 max_gap: int = 0, class_gated: bool = True,
                 frame_numbers: Sequence[int] | None = None,
                 point_ids: Sequence[str] | None = None) -> list[Track]:
    """Greedy frame-to-frame IoU matching.

    A track can be continued by a box ``k`` frames after its last member when
    ``k - 1 <= max_gap`` (``max_gap=0`` links consecutive frames only).
    Candidate pairs are accepted in order of IoU descending, then shorter gap,
    then lower box indices.
    """
    if not 0 < match_iou <= 1:
        raise ValueError(f"match_iou must lie in (0, 1], got {match_iou}")
    if max_gap < 0:
        raise ValueError("max_gap must be non-negative")
    numbers = list(range(len(frames))) if frame_numbers is None else list(frame_numbers)
    ids = [str(n) for n in numbers] if point_ids is None else list(point_ids)
    if len(numbers) != len(frames) or len(ids) != len(frames):
        raise ValueError("frame_numbers/point_ids must match the number of frames")
    if any(b <= a for a, b in zip(numbers, numbers[1:])):
        raise StreamError("frame numbers must be strictly increasing")

    tracks: list[Track] = []
    for f, boxes, pid in zip(numbers, frames, ids):
        live = [t for t in tracks if f - t.members[-1].frame - 1 <= max_gap]
        pairs = []
        for t in live:
            last = t.members[-1]
            gap = f - last.frame
            for j, box in enumerate(boxes):
                if class_gated and box.class_label != t.class_label:
                    continue
                v = iou(last.box, box)
                if v >= match_iou:
                    pairs.append((-v, gap, last.index, j, t.track_id))
        pairs.sort()
        used_tracks: set[int] = set()
        used_boxes: set[int] = set()
        for _, _, _, j, tid in pairs:
            if tid in used_tracks or j in used_boxes:
                continue
            used_tracks.add(tid)
            used_boxes.add(j)
            tracks[tid].members.append(TrackMember(f, pid, j, boxes[j]))
        for j, box in enumerate(boxes):
            if j not in used_boxes:
                tracks.append(Track(len(tracks), box.class_label, [TrackMember(f, pid, j, box)]))
    return tracks


def tracks_from_stream(stream: Sequence[PredictionRecord], match_iou: float = 0.5, **kwargs) -> list[Track]:
    numbers = []
    for rec in stream:
        if rec.frame is None:
            raise StreamError(f"record {rec.point_id} has no frame number")
        numbers.append(rec.frame)
    return build_tracks([r.boxes for r in stream], match_iou, frame_numbers=numbers,
                        point_ids=[r.point_id for r in stream], **kwargs)


def presence_timeline(track: Track, fps: float | None = None,
                      times: Mapping[int, float] | None = None) -> list[Interval]:
    """Maximal runs of consecutive frames, converted to seconds.

    Either ``fps`` or a frame -> seconds mapping ``times`` must be given.
    """
    if not track.members:
        raise ValueError("empty track")
    if times is None:
        if not fps or fps <= 0:
            raise ValueError("need a positive fps or a times mapping")

        def to_s(frame):
            return frame / fps
    else:
        def to_s(frame):
            return times[frame]

    frames = sorted(set(track.frames))
    runs = [[frames[0], frames[0]]]
    for fr in frames[1:]:
        if fr == runs[-1][1] + 1:
            runs[-1][1] = fr
        else:
            runs.append([fr, fr])
    return [Interval(to_s(a), to_s(b), a, b) for a, b in runs]
