from __future__ import annotations

import itertools

import numpy as np
import pytest

from modelassert.assertions import multibox, register_multibox
from modelassert.engine import (AssertionDescriptor, AssertionRegistry, SeverityMatrix,
                                confidence_percentile_report, evaluate_stream, flagged_points,
                                record_confidence)
from modelassert.errors import InvariantError, RegistryError, StreamError
from modelassert.records import ClassLabel, PredictionRecord
from conftest import box, video


def labels(n, dt=1.0):
    return [PredictionRecord(f"p{i}", i * dt, label=ClassLabel("N", 0.5)) for i in range(n)]


def test_register_dense_ids_and_rejections():
    reg = AssertionRegistry(max_window=100)
    assert register_multibox(reg) == 0
    assert reg.register(AssertionDescriptor("flicker", 1.0, "seconds"), lambda w: 0) == 1
    with pytest.raises(RegistryError):
        reg.add("flicker", lambda w: 0)
    with pytest.raises(RegistryError):
        reg.add("wide", lambda w: 0, window=101)
    reg.freeze()
    with pytest.raises(RegistryError):
        reg.add("late", lambda w: 0)


def test_abstaining_assertion_gives_zero_matrix():
    reg = AssertionRegistry()
    reg.add("never", lambda w: 0)
    m, rep = evaluate_stream(labels(3), reg)
    assert m.scores.shape == (3, 1) and not m.scores.any()
    assert rep.assertions[0].trigger_count == 0


def test_empty_stream():
    reg = AssertionRegistry()
    reg.add("never", lambda w: 0)
    m, rep = evaluate_stream([], reg)
    assert m.scores.shape == (0, 1)
    assert m.trigger_counts().tolist() == [0]


def test_multibox_fires_on_record_two():
    same = [box(0), box(0), box(0)]
    stream = video([[box(0)], [], same])
    reg = AssertionRegistry()
    register_multibox(reg)
    m, rep = evaluate_stream(stream, reg)
    assert m.scores[:, 0].tolist() == [0, 0, 1]
    assert rep.assertions[0].flagged == [("f2", 1.0)]


def test_errors():
    reg = AssertionRegistry()
    reg.add("neg", lambda w: -1)
    with pytest.raises(InvariantError):
        evaluate_stream(labels(1), reg)
    reg = AssertionRegistry()
    reg.add("ok", lambda w: 0)
    with pytest.raises(StreamError):
        evaluate_stream(labels(2)[::-1], reg)
    with pytest.raises(RegistryError):
        evaluate_stream(labels(2), AssertionRegistry())


def brute_window(stream, i, desc, max_window):
    """Records j <= i belonging to the window of record i, by direct scan."""
    out = []
    for j in range(i + 1):
        if desc.window_unit == "records":
            inside = i - j < max(int(desc.window), 1)
        else:
            inside = stream[j].timestamp >= stream[i].timestamp - desc.window and i - j < max_window
        if inside:
            out.append(stream[j].point_id)
    return out


@pytest.mark.parametrize("unit,window", [("records", 0), ("records", 1), ("records", 3),
                                         ("seconds", 0.0), ("seconds", 1.0), ("seconds", 2.5)])
def test_window_contents_match_enumeration(unit, window):
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.choice([0.0, 0.5, 1.0], size=25))
    stream = [PredictionRecord(f"p{i}", float(v), label=ClassLabel("N", 0.5)) for i, v in enumerate(t)]
    seen = []
    reg = AssertionRegistry(max_window=6)
    desc = AssertionDescriptor("w", window, unit)
    reg.register(desc, lambda w: seen.append([r.point_id for r in w]) or 0)
    evaluate_stream(stream, reg)
    assert seen == [brute_window(stream, i, desc, 6) for i in range(len(stream))]


def test_causal_evaluation():
    """Appending records never changes the scores of earlier ones."""
    reg = AssertionRegistry()
    reg.add("run", lambda w: float(sum(r.label.class_label == "A" for r in w)), window=2.0,
            window_unit="seconds")
    rng = np.random.default_rng(1)
    stream = [PredictionRecord(f"p{i}", i * 0.5, label=ClassLabel(str(rng.choice(["A", "B"])), 0.5))
              for i in range(40)]
    full, _ = evaluate_stream(stream, reg)
    for k in (1, 10, 39):
        part, _ = evaluate_stream(stream[:k], reg)
        assert np.array_equal(part.scores, full.scores[:k])


def test_flagged_points_order_and_range():
    m = SeverityMatrix(["p0", "p1", "p2"], ["a"], np.array([[0.0], [2.0], [1.0]]))
    assert flagged_points(m, 0) == [("p1", 2.0), ("p2", 1.0)]
    tie = SeverityMatrix(["p1", "p0"], ["a"], np.array([[1.0], [1.0]]))
    assert flagged_points(tie, 0) == [("p0", 1.0), ("p1", 1.0)]
    zero = SeverityMatrix(["p0"], ["a"], np.zeros((1, 1)))
    assert flagged_points(zero, 0) == []
    with pytest.raises(IndexError):
        flagged_points(m, 1)


def test_matrix_json_roundtrip():
    m = SeverityMatrix(["a", "b"], ["x", "y"], np.array([[0, 1.5], [2, 0]]), 3)
    back = SeverityMatrix.from_dict(m.to_dict())
    assert back.point_ids == m.point_ids and back.round_tag == 3
    assert np.array_equal(back.scores, m.scores)


def test_percentile_examples():
    pop = [i / 10 for i in range(1, 11)]
    assert confidence_percentile_report([("x", 0.9)], pop, k=1) == [(1, 90.0)]
    assert confidence_percentile_report([("x", 1.0)], pop, k=1) == [(1, 100.0)]
    with pytest.raises(ValueError):
        confidence_percentile_report([("x", 1.0)], [], k=1)


def test_record_confidence():
    assert record_confidence(labels(1)[0]) == 0.5
    r = video([[box(0, conf=0.3), box(5, conf=0.8)]])[0]
    assert 0.3 <= record_confidence(r) <= 0.8


def test_multibox_examples():
    assert multibox([box(0)] * 3) == 1
    assert multibox([box(0)] * 2) == 0
    four = [box(0)] * 4
    assert multibox(four) == len(list(itertools.combinations(range(4), 3))) == 4
    # a chain a~b~c where a and c do not overlap enough is not a triple
    assert multibox([box(0), box(3), box(6)], 0.3) == 0
    assert multibox([box(0, conf=0.2), box(0, conf=0.7), box(0, conf=0.4)],
                    severity="max_confidence") == 0.7
