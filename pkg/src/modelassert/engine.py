"""Assertion registry, stream evaluation and monitoring reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import InvariantError, RegistryError
from .records import PredictionRecord, check_stream

CUSTOM = "custom"
GENERATED_ATTRIBUTE = "generated-attribute"
GENERATED_TEMPORAL = "generated-temporal"
KINDS = (CUSTOM, GENERATED_ATTRIBUTE, GENERATED_TEMPORAL)

DEFAULT_MAX_WINDOW = 10_000

WindowEvaluator = Callable[[Sequence[PredictionRecord]], float]
StreamEvaluator = Callable[[Sequence[PredictionRecord]], Sequence[float]]


@dataclass(frozen=True)
class AssertionDescriptor:
    """``window`` is the number of trailing records (current one included)
    the evaluator sees, or seconds when ``window_unit == "seconds"``."""

    name: str
    window: float = 1
    window_unit: str = "records"
    kind: str = CUSTOM
    assertion_id: int = -1

    def __post_init__(self):
        if self.window < 0:
            raise RegistryError(f"{self.name}: window must be non-negative")
        if self.window_unit not in ("records", "seconds"):
            raise RegistryError(f"{self.name}: unknown window unit {self.window_unit!r}")
        if self.kind not in KINDS:
            raise RegistryError(f"{self.name}: unknown kind {self.kind!r}")


@dataclass
class _Entry:
    descriptor: AssertionDescriptor
    evaluator: Callable


class AssertionRegistry:
    """Ordered set of assertions; ids are dense in registration order.

    Custom assertions are evaluated causally on a trailing window of records.
    Generated (consistency) assertions take the whole stream and return one
    severity per record.
    """

    def __init__(self, max_window: int = DEFAULT_MAX_WINDOW):
        self.max_window = max_window
        self._entries: list[_Entry] = []
        self._frozen = False

    def register(self, descriptor: AssertionDescriptor, evaluator: Callable) -> int:
        if self._frozen:
            raise RegistryError("registry is frozen")
        if any(e.descriptor.name == descriptor.name for e in self._entries):
            raise RegistryError(f"duplicate assertion name {descriptor.name!r}")
        if descriptor.window_unit == "records" and descriptor.window > self.max_window:
            raise RegistryError(
                f"{descriptor.name}: window {descriptor.window} exceeds maximum {self.max_window}")
        aid = len(self._entries)
        self._entries.append(_Entry(replace(descriptor, assertion_id=aid), evaluator))
        return aid

    def add(self, name: str, evaluator: WindowEvaluator, window: float = 1,
            window_unit: str = "records") -> int:
        """Shorthand for registering a custom assertion."""
        return self.register(AssertionDescriptor(name, window, window_unit), evaluator)

    def freeze(self) -> AssertionRegistry:
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def descriptors(self) -> list[AssertionDescriptor]:
        return [e.descriptor for e in self._entries]

    @property
    def names(self) -> list[str]:
        return [e.descriptor.name for e in self._entries]

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, aid: int) -> AssertionDescriptor:
        return self._entries[aid].descriptor

    def entries(self):
        return list(self._entries)


def register_assertion(registry: AssertionRegistry, descriptor: AssertionDescriptor,
                       evaluator: Callable) -> int:
    return registry.register(descriptor, evaluator)


@dataclass
class SeverityMatrix:
    point_ids: list[str]
    names: list[str]
    scores: np.ndarray
    round_tag: int = 0

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def d(self) -> int:
        return self.scores.shape[1]

    def trigger_counts(self) -> np.ndarray:
        return (self.scores > 0).sum(axis=0).astype(int)

    def to_dict(self) -> dict:
        return {"round": self.round_tag, "assertions": list(self.names),
                "point_ids": list(self.point_ids),
                "scores": [[float(v) for v in row] for row in self.scores]}

    @classmethod
    def from_dict(cls, data: dict) -> SeverityMatrix:
        names = list(data["assertions"])
        scores = np.asarray(data["scores"], dtype=float).reshape(-1, len(names))
        return cls(list(data["point_ids"]), names, scores, int(data.get("round", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class AssertionSummary:
    assertion_id: int
    name: str
    kind: str
    trigger_count: int
    total_severity: float
    flagged: list[tuple[str, float]] = field(default_factory=list)


@dataclass
class AssertionReport:
    n: int
    assertions: list[AssertionSummary]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "assertions": [
                {"id": a.assertion_id, "name": a.name, "kind": a.kind,
                 "trigger_count": a.trigger_count, "total_severity": a.total_severity,
                 "flagged": [[pid, sev] for pid, sev in a.flagged]}
                for a in self.assertions
            ],
        }


def _window(stream, i, desc: AssertionDescriptor, max_window: int):
    if desc.window_unit == "records":
        size = max(int(desc.window), 1)
        return stream[max(0, i - size + 1): i + 1]
    lo = i
    cutoff = stream[i].timestamp - desc.window
    while lo > 0 and i - lo + 1 < max_window and stream[lo - 1].timestamp >= cutoff:
        lo -= 1
    return stream[lo: i + 1]


def _check_severity(value, name, where) -> float:
    value = float(value)
    if math.isnan(value) or value < 0:
        raise InvariantError(f"assertion {name!r} returned invalid severity {value} at {where}")
    return value


def evaluate_stream(stream: Sequence[PredictionRecord], registry: AssertionRegistry,
                    round_tag: int = 0) -> tuple[SeverityMatrix, AssertionReport]:
    """Run every registered assertion over ``stream``.

    Custom assertions see only records up to and including the one being
    scored. Generated assertions run in a second whole-stream pass.
    """
    if len(registry) == 0:
        raise RegistryError("registry is empty")
    stream = list(stream)
    check_stream(stream)
    n, d = len(stream), len(registry)
    scores = np.zeros((n, d))
    for entry in registry.entries():
        desc = entry.descriptor
        m = desc.assertion_id
        if desc.kind == CUSTOM:
            for i in range(n):
                win = _window(stream, i, desc, registry.max_window)
                scores[i, m] = _check_severity(entry.evaluator(win), desc.name, stream[i].point_id)
        else:
            col = list(entry.evaluator(stream)) if n else []
            if len(col) != n:
                raise InvariantError(f"assertion {desc.name!r} returned {len(col)} scores for {n} records")
            for i, v in enumerate(col):
                scores[i, m] = _check_severity(v, desc.name, stream[i].point_id)
    matrix = SeverityMatrix([r.point_id for r in stream], registry.names, scores, round_tag)
    return matrix, build_report(matrix, registry.descriptors)


def build_report(matrix: SeverityMatrix, descriptors: Sequence[AssertionDescriptor] | None = None) -> AssertionReport:
    summaries = []
    for m, name in enumerate(matrix.names):
        flagged = flagged_points(matrix, m)
        kind = descriptors[m].kind if descriptors is not None else CUSTOM
        summaries.append(AssertionSummary(m, name, kind, len(flagged),
                                          float(matrix.scores[:, m].sum()) if matrix.n else 0.0,
                                          flagged))
    return AssertionReport(matrix.n, summaries)


def flagged_points(matrix: SeverityMatrix, assertion_id: int) -> list[tuple[str, float]]:
    """Points with positive severity, most severe first; ties by point_id."""
    if not 0 <= assertion_id < matrix.d:
        raise IndexError(f"assertion id {assertion_id} out of range for d={matrix.d}")
    col = matrix.scores[:, assertion_id]
    hits = [(matrix.point_ids[i], float(col[i])) for i in np.flatnonzero(col > 0)]
    hits.sort(key=lambda p: (-p[1], p[0]))
    return hits


def confidence_percentile_report(flagged: Sequence[tuple[str, float]], population: Sequence[float],
                                 k: int = 10) -> list[tuple[int, float]]:
    """Percentile (inclusive count, x100) of the ``k`` most confident
    flagged points within ``population``."""
    if len(population) == 0:
        raise ValueError("population is empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    pop = np.sort(np.asarray(population, dtype=float))
    top = sorted(flagged, key=lambda p: (-p[1], p[0]))[:k]
    out = []
    for rank, (_, conf) in enumerate(top, start=1):
        count = int(np.searchsorted(pop, conf, side="right"))
        out.append((rank, 100.0 * count / len(pop)))
    return out


def record_confidence(record: PredictionRecord) -> float:
    """Single confidence per record for percentile reporting: the label's
    confidence, or the most confident box (0 for an empty frame)."""
    if record.label is not None:
        return record.label.confidence
    return max((b.confidence for b in record.boxes), default=0.0)

