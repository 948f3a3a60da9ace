"""Consistency assertions: identifier/attribute matching and temporal
persistence, with correction rules that emit weak labels.

Outputs are grouped by ``id_fn``. Within a group every attribute key must
take a single value, and the identifier's presence may change at most once
per ``t_persist`` seconds. Violations map to edits: deviating attributes are
relabelled to the consensus value, short appearances are removed, and
flicker gaps are filled by a user-supplied weak-label function.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .engine import (GENERATED_ATTRIBUTE, GENERATED_TEMPORAL, AssertionDescriptor,
                     AssertionRegistry)
from .errors import EditConflictError
from .records import PredictionRecord, set_attribute
from .tracks import Interval

FLICKER = "flicker"
SHORT = "short-appearance"
MODES = ("both", "flicker", "short")

MODIFY = "modify_attribute"
REMOVE = "remove_output"
ADD = "add_output"


def _no_attrs(output) -> list[tuple[str, str]]:
    return []


@dataclass
class ConsistencyConfig:
    """Inputs to :func:`add_consistency_assertion`.

    ``weak_label_fn(history, gap)`` receives every ``(timestamp, output)`` of
    one identifier and a :class:`Gap`; it returns one synthesized output per
    ``gap.times`` entry, or None to decline. ``consensus_fn(key, values)``
    overrides majority voting for attribute corrections. ``attr_keys``
    declares which keys get a registered assertion; when empty,
    :func:`run_consistency` discovers keys from the data.
    """

    id_fn: Callable[[Any], Hashable]
    attrs_fn: Callable[[Any], Iterable[tuple[str, str]]] = _no_attrs
    t_persist: float = 0.0
    weak_label_fn: Callable | None = None
    attr_keys: tuple[str, ...] = ()
    consensus_fn: Callable[[str, list[str]], str] | None = None
    temporal_mode: str = "both"
    name: str = "consistency"
    set_attr_fn: Callable[[Any, str, str], Any] = set_attribute

    def __post_init__(self):
        if not np.isfinite(self.t_persist):
            raise ValueError("t_persist must be finite")
        if self.t_persist < 0:
            raise ValueError(f"t_persist must be non-negative, got {self.t_persist}")
        if self.temporal_mode not in MODES:
            raise ValueError(f"temporal_mode must be one of {MODES}")
        self.attr_keys = tuple(self.attr_keys)


class Member(NamedTuple):
    point_id: str
    index: int
    attrs: dict
    timestamp: float
    position: int
    output: Any


@dataclass
class IdentifierGroup:
    identifier: Hashable
    members: list[Member] = field(default_factory=list)

    def values(self, key: str) -> list[tuple[str, Member]]:
        return [(m.attrs[key], m) for m in self.members if key in m.attrs]


@dataclass(frozen=True)
class AttributeViolation:
    identifier: Hashable
    key: str
    counts: tuple[tuple[str, int], ...]
    majority: str
    deviating: tuple[tuple[str, int], ...]

    @property
    def severity(self) -> int:
        return len(self.deviating)


@dataclass(frozen=True)
class TemporalViolation:
    """``start``/``end`` bound the gap (flicker) or segment (short
    appearance); ``first``..``last`` are the stream positions it covers."""

    identifier: Hashable
    pattern: str
    start: float
    end: float
    first: int
    last: int


@dataclass(frozen=True)
class Gap:
    identifier: Hashable
    start: float
    end: float
    point_ids: tuple[str, ...]
    times: tuple[float, ...]


@dataclass(frozen=True)
class CorrectionEdit:
    """``index`` is None for additions, which land in record ``point_id``."""

    kind: str
    point_id: str
    index: int | None
    key: str | None = None
    value: Any = None
    time: float | None = None
    source: Any = None


# -- grouping --------------------------------------------------------------

def group_items(items: Iterable[tuple[Hashable, Member]]) -> list[IdentifierGroup]:
    groups: dict[Hashable, IdentifierGroup] = {}
    for ident, member in items:
        groups.setdefault(ident, IdentifierGroup(ident)).members.append(member)
    return list(groups.values())


def build_groups(stream: Sequence[PredictionRecord], config: ConsistencyConfig) -> list[IdentifierGroup]:
    """Group outputs by identifier, in order of first appearance.

    Outputs whose identifier is None are ignored.
    """
    def items():
        for pos, rec in enumerate(stream):
            for j, out in enumerate(rec.outputs):
                ident = config.id_fn(out)
                if ident is None:
                    continue
                yield ident, Member(rec.point_id, j, dict(config.attrs_fn(out)), rec.timestamp, pos, out)
    return group_items(items())


def consensus(values: Sequence[str]) -> str:
    """Most common value; ties go to the value seen first."""
    counts = Counter(values)
    best = max(counts.values())
    return next(v for v in values if counts[v] == best)


# -- attribute consistency -------------------------------------------------

def check_attribute_consistency(groups: Sequence[IdentifierGroup], key: str) -> list[AttributeViolation]:
    out = []
    for g in groups:
        vals = g.values(key)
        if not vals:
            continue
        seq = [v for v, _ in vals]
        counts = Counter(seq)
        if len(counts) < 2:
            continue
        major = consensus(seq)
        ordered = tuple((v, counts[v]) for v in dict.fromkeys(seq))
        deviating = tuple((m.point_id, m.index) for v, m in vals if v != major)
        out.append(AttributeViolation(g.identifier, key, ordered, major, deviating))
    return out


# -- temporal consistency --------------------------------------------------

def group_intervals(group: IdentifierGroup, times: Sequence[float]) -> list[Interval]:
    """Maximal runs of consecutive stream positions holding the identifier."""
    positions = sorted({m.position for m in group.members})
    runs = [[positions[0], positions[0]]]
    for p in positions[1:]:
        if p == runs[-1][1] + 1:
            runs[-1][1] = p
        else:
            runs.append([p, p])
    return [Interval(times[a], times[b], a, b) for a, b in runs]


def build_timelines(groups: Sequence[IdentifierGroup], times: Sequence[float]) -> dict[Hashable, list[Interval]]:
    return {g.identifier: group_intervals(g, times) for g in groups if g.members}


def transitions(intervals: Sequence[Interval], t_persist: float, stream_start: float,
                stream_end: float) -> list[tuple[float, str, int]]:
    """(time, direction, interval index) in time order.

    Presence at stream start is not an appearance. The last disappearance
    only counts when at least ``t_persist`` seconds of stream follow it.
    """
    out = []
    last = len(intervals) - 1
    for k, iv in enumerate(intervals):
        if iv.start > stream_start:
            out.append((iv.start, "appear", k))
        if iv.end < stream_end and (k < last or stream_end - iv.end >= t_persist):
            out.append((iv.end, "disappear", k))
    return out


def check_temporal_consistency(timelines: dict[Hashable, Sequence[Interval]], t_persist: float,
                               stream_start: float | None = None, stream_end: float | None = None,
                               mode: str = "both") -> list[TemporalViolation]:
    """One violation per pair of consecutive transitions closer than
    ``t_persist``: disappear->appear is a flicker, appear->disappear a short
    appearance. ``mode`` restricts which pattern is reported."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if t_persist < 0:
        raise ValueError("t_persist must be non-negative")
    all_iv = [iv for ivs in timelines.values() for iv in ivs]
    if not all_iv:
        return []
    if stream_start is None:
        stream_start = min(iv.start for iv in all_iv)
    if stream_end is None:
        stream_end = max(iv.end for iv in all_iv)
    out = []
    for ident, ivs in timelines.items():
        trans = transitions(ivs, t_persist, stream_start, stream_end)
        for (tu, du, ku), (tv, dv, kv) in zip(trans, trans[1:]):
            if tv - tu >= t_persist:
                continue
            if du == "disappear" and dv == "appear" and mode != "short":
                out.append(TemporalViolation(ident, FLICKER, tu, tv, ivs[ku].last + 1, ivs[kv].first - 1))
            elif du == "appear" and dv == "disappear" and mode != "flicker":
                iv = ivs[ku]
                out.append(TemporalViolation(ident, SHORT, iv.start, iv.end, iv.first, iv.last))
    return out


# -- corrections -----------------------------------------------------------

def interpolate_boxes(history: Sequence[tuple[float, Any]], gap: Gap) -> list[Any] | None:
    """Weak labels for a flicker gap: per-coordinate linear interpolation
    between the boxes flanking it, confidence averaged."""
    before = [o for t, o in history if t <= gap.start]
    after = [o for t, o in history if t >= gap.end]
    if not before or not after:
        return None
    a = before[-1]
    b = after[0]
    span = gap.end - gap.start
    out = []
    for t in gap.times:
        f = (t - gap.start) / span if span > 0 else 0.5
        out.append(type(a)(
            x=a.x + f * (b.x - a.x), y=a.y + f * (b.y - a.y),
            w=a.w + f * (b.w - a.w), h=a.h + f * (b.h - a.h),
            class_label=a.class_label, confidence=(a.confidence + b.confidence) / 2,
            attrs=dict(a.attrs)))
    return out


def _consensus_value(config: ConsistencyConfig, key: str, values: list[str]) -> str:
    if config.consensus_fn is not None:
        return config.consensus_fn(key, values)
    return consensus(values)


def propose_corrections(violations: Sequence[AttributeViolation | TemporalViolation],
                        groups: Sequence[IdentifierGroup], config: ConsistencyConfig,
                        stream: Sequence[PredictionRecord]) -> tuple[list[CorrectionEdit], list]:
    """Edits for ``violations``; returns ``(edits, uncorrectable)``.

    Flicker gaps are filled when ``config.weak_label_fn`` yields outputs.
    Segments joined by filled gaps are then judged together: if the merged
    segment is still shorter than ``t_persist`` its members are removed and
    the fills dropped. A short segment next to an unfilled flicker gap is left
    alone, since removing it would only widen the gap.
    """
    times = [r.timestamp for r in stream]
    by_id = {g.identifier: g for g in groups}
    t_persist = config.t_persist
    start, end = (times[0], times[-1]) if times else (0.0, 0.0)

    temporal: dict[Hashable, list[TemporalViolation]] = {}
    for v in violations:
        if isinstance(v, TemporalViolation):
            temporal.setdefault(v.identifier, []).append(v)

    edits: list[CorrectionEdit] = []
    uncorrectable: list = []
    removed: set[tuple[str, int]] = set()
    fills_for: dict[Hashable, list[CorrectionEdit]] = {}

    for ident, vs in temporal.items():
        group = by_id[ident]
        ivs = group_intervals(group, times)
        last_of = {iv.last: k for k, iv in enumerate(ivs)}
        flickers = {}
        shorts = {}
        for v in vs:
            if v.pattern == FLICKER:
                flickers[last_of[v.first - 1]] = v
            else:
                shorts[last_of[v.last]] = v
        history = [(m.timestamp, m.output) for m in group.members]
        fills: dict[int, list[CorrectionEdit]] = {}
        for k, v in flickers.items():
            gap = Gap(ident, v.start, v.end, tuple(stream[p].point_id for p in range(v.first, v.last + 1)),
                      tuple(times[p] for p in range(v.first, v.last + 1)))
            synth = config.weak_label_fn(history, gap) if config.weak_label_fn else None
            if not synth or len(synth) != len(gap.times):
                uncorrectable.append(v)
                continue
            fills[k] = [CorrectionEdit(ADD, pid, None, value=o, time=t, source=v)
                        for pid, t, o in zip(gap.point_ids, gap.times, synth)]

        # chains of intervals joined by filled gaps
        chains = [[0]]
        for k in range(1, len(ivs)):
            if (k - 1) in fills:
                chains[-1].append(k)
            else:
                chains.append([k])
        for chain in chains:
            i, j = chain[0], chain[-1]
            seg = Interval(ivs[i].start, ivs[j].end, ivs[i].first, ivs[j].last)
            appears = seg.start > start
            disappears = seg.end < end and (j < len(ivs) - 1 or end - seg.end >= t_persist)
            is_short = (config.temporal_mode != "flicker" and appears and disappears
                        and seg.end - seg.start < t_persist and any(k in shorts for k in chain))
            if is_short:
                blocked = (i - 1) in flickers or j in flickers
                if blocked:
                    uncorrectable.extend(shorts[k] for k in chain if k in shorts)
                    uncorrectable.extend(flickers[k] for k in chain[:-1])
                    continue
                source = TemporalViolation(ident, SHORT, seg.start, seg.end, seg.first, seg.last)
                for m in group.members:
                    if seg.first <= m.position <= seg.last:
                        edits.append(CorrectionEdit(REMOVE, m.point_id, m.index, time=m.timestamp, source=source))
                        removed.add((m.point_id, m.index))
            else:
                for k in chain[:-1]:
                    fills_for.setdefault(ident, []).extend(fills[k])

    keys_seen = set()
    for v in violations:
        if not isinstance(v, AttributeViolation):
            continue
        keys_seen.add(v.key)
        group = by_id[v.identifier]
        vals = group.values(v.key)
        target = _consensus_value(config, v.key, [x for x, _ in vals])
        for x, m in vals:
            if x != target and (m.point_id, m.index) not in removed:
                edits.append(CorrectionEdit(MODIFY, m.point_id, m.index, key=v.key, value=target,
                                            time=m.timestamp, source=v))

    # synthesized outputs inherit each identifier's consensus attributes
    for ident, adds in fills_for.items():
        group = by_id[ident]
        for e in adds:
            out = e.value
            for key, val in config.attrs_fn(out):
                vals = [x for x, _ in group.values(key)]
                if vals:
                    target = _consensus_value(config, key, vals)
                    if val != target:
                        out = config.set_attr_fn(out, key, target)
            edits.append(CorrectionEdit(ADD, e.point_id, None, value=out, time=e.time, source=e.source))
    return edits, uncorrectable


def apply_edits(stream: Sequence[PredictionRecord], edits: Sequence[CorrectionEdit],
                set_attr_fn: Callable[[Any, str, str], Any] = set_attribute) -> list[PredictionRecord]:
    """New stream with ``edits`` applied; the input is left untouched.

    Modified outputs keep their position, removed ones are dropped and added
    ones are appended to their record's outputs.
    """
    by_pid = {r.point_id: r for r in stream}
    conflicts = []
    modify: dict[tuple[str, int, str], CorrectionEdit] = {}
    remove: dict[tuple[str, int], CorrectionEdit] = {}
    adds: dict[str, list[CorrectionEdit]] = {}
    for e in edits:
        rec = by_pid.get(e.point_id)
        if rec is None:
            raise ValueError(f"edit targets unknown point {e.point_id!r}")
        if e.kind == ADD:
            if rec.label is not None:
                raise ValueError(f"cannot add an output to single-label record {e.point_id!r}")
            adds.setdefault(e.point_id, []).append(e)
            continue
        if e.index is None or not 0 <= e.index < len(rec.outputs):
            raise ValueError(f"edit targets missing output {e.point_id!r}[{e.index}]")
        if e.kind == MODIFY:
            k = (e.point_id, e.index, e.key)
            if k in modify:
                conflicts.append(("duplicate modify", k))
            modify[k] = e
        elif e.kind == REMOVE:
            k = (e.point_id, e.index)
            if k in remove:
                conflicts.append(("duplicate remove", k))
            if rec.label is not None:
                raise ValueError(f"cannot remove the only output of label record {e.point_id!r}")
            remove[k] = e
        else:
            raise ValueError(f"unknown edit kind {e.kind!r}")
    for pid, idx, key in modify:
        if (pid, idx) in remove:
            conflicts.append(("modify and remove", (pid, idx, key)))
    if conflicts:
        raise EditConflictError(conflicts)

    touched = {k[0] for k in modify} | {k[0] for k in remove} | set(adds)
    out = []
    for rec in stream:
        if rec.point_id not in touched:
            out.append(rec)
            continue
        outputs = list(rec.outputs)
        for (pid, idx, key), e in modify.items():
            if pid == rec.point_id:
                outputs[idx] = set_attr_fn(outputs[idx], key, e.value)
        kept = [o for j, o in enumerate(outputs) if (rec.point_id, j) not in remove]
        kept.extend(e.value for e in adds.get(rec.point_id, []))
        out.append(rec.with_outputs(kept))
    return out


# -- severities and the assertion surface -----------------------------------

def attribute_severities(violations: Sequence[AttributeViolation], stream: Sequence[PredictionRecord]) -> np.ndarray:
    """1 per violating group for each record holding one of its deviating members."""
    pos = {r.point_id: i for i, r in enumerate(stream)}
    sev = np.zeros(len(stream))
    for v in violations:
        for p in {pos[pid] for pid, _ in v.deviating}:
            sev[p] += 1
    return sev


def temporal_severities(violations: Sequence[TemporalViolation], n: int) -> np.ndarray:
    """1 per violation for each record it covers (gap records for a flicker,
    segment records for a short appearance)."""
    sev = np.zeros(n)
    for v in violations:
        sev[v.first: v.last + 1] += 1
    return sev


def discover_keys(groups: Sequence[IdentifierGroup]) -> tuple[str, ...]:
    keys = {}
    for g in groups:
        for m in g.members:
            keys.update(dict.fromkeys(m.attrs))
    return tuple(keys)


@dataclass
class ConsistencyResult:
    groups: list[IdentifierGroup]
    timelines: dict
    attribute_violations: list[AttributeViolation]
    temporal_violations: list[TemporalViolation]
    edits: list[CorrectionEdit]
    uncorrectable: list

    @property
    def violations(self) -> list:
        return list(self.attribute_violations) + list(self.temporal_violations)


def check_groups(groups: list[IdentifierGroup], stream: Sequence[PredictionRecord],
                 config: ConsistencyConfig) -> ConsistencyResult:
    times = [r.timestamp for r in stream]
    keys = config.attr_keys or discover_keys(groups)
    attr = [v for k in keys for v in check_attribute_consistency(groups, k)]
    timelines = build_timelines(groups, times)
    temporal = []
    if config.t_persist > 0 and times:
        temporal = check_temporal_consistency(timelines, config.t_persist, times[0], times[-1],
                                              config.temporal_mode)
    edits, uncorrectable = propose_corrections(attr + temporal, groups, config, stream)
    return ConsistencyResult(groups, timelines, attr, temporal, edits, uncorrectable)


def run_consistency(stream: Sequence[PredictionRecord], config: ConsistencyConfig) -> ConsistencyResult:
    return check_groups(build_groups(stream, config), stream, config)


def add_consistency_assertion(config: ConsistencyConfig, registry: AssertionRegistry) -> list[int]:
    """Register one Boolean assertion per declared attribute key, plus one
    temporal assertion when ``t_persist > 0``. Returns the new ids."""
    if config.t_persist < 0:
        raise ValueError("t_persist must be non-negative")
    ids = []
    for key in config.attr_keys:
        def attr_eval(stream, key=key):
            groups = build_groups(stream, config)
            return attribute_severities(check_attribute_consistency(groups, key), stream)
        ids.append(registry.register(
            AssertionDescriptor(f"{config.name}.{key}", 0, "records", GENERATED_ATTRIBUTE), attr_eval))
    if config.t_persist > 0:
        def temporal_eval(stream):
            if not stream:
                return np.zeros(0)
            times = [r.timestamp for r in stream]
            timelines = build_timelines(build_groups(stream, config), times)
            vs = check_temporal_consistency(timelines, config.t_persist, times[0], times[-1],
                                            config.temporal_mode)
            return temporal_severities(vs, len(stream))
        ids.append(registry.register(
            AssertionDescriptor(f"{config.name}.temporal", config.t_persist, "seconds", GENERATED_TEMPORAL),
            temporal_eval))
    return ids
