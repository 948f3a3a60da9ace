from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modelassert.consistency import (ADD, FLICKER, MODIFY, REMOVE, SHORT, ConsistencyConfig,
                                     CorrectionEdit, Gap, add_consistency_assertion, apply_edits,
                                     build_groups, check_attribute_consistency,
                                     check_temporal_consistency, interpolate_boxes,
                                     run_consistency)
from modelassert.engine import AssertionRegistry, evaluate_stream
from modelassert.errors import EditConflictError
from modelassert.records import ClassLabel, DetectionBox, PredictionRecord
from modelassert.tracks import Interval
from oracles import (attrs_of, copy_previous, id_of, oracle_attribute, oracle_temporal,
                     random_stream, windowed_violation_exists)


def face(ident, **attrs):
    return DetectionBox(0, 0, 10, 10, "face", 0.9, {"id": ident, **attrs})


def stream_of(frames, dt=0.1):
    return [PredictionRecord(f"p{i}", round(i * dt, 6), boxes=b) for i, b in enumerate(frames)]


CFG = dict(id_fn=id_of, attrs_fn=attrs_of)


# -- generated assertions ------------------------------------------------

@pytest.mark.parametrize("keys,t,count", [(("gender", "hair"), 1.0, 3), (("gender",), 0.0, 1), ((), 2.0, 1)])
def test_generated_assertion_count(keys, t, count):
    reg = AssertionRegistry()
    ids = add_consistency_assertion(ConsistencyConfig(**CFG, t_persist=t, attr_keys=keys), reg)
    assert len(ids) == len(reg) == count


def test_negative_t_persist_rejected():
    with pytest.raises(ValueError):
        ConsistencyConfig(**CFG, t_persist=-1)


# -- attributes --------------------------------------------------------------

def attr_stream(values):
    return stream_of([[face("X", gender=v)] for v in values])


def groups(stream):
    return build_groups(stream, ConsistencyConfig(**CFG))


def test_majority_violation():
    (v,) = check_attribute_consistency(groups(attr_stream("MMF")), "gender")
    assert v.majority == "M" and v.deviating == (("p2", 0),)


def test_agreeing_values():
    assert check_attribute_consistency(groups(attr_stream("MM")), "gender") == []


def test_tie_goes_to_earliest():
    (v,) = check_attribute_consistency(groups(attr_stream("MF")), "gender")
    assert v.majority == "M" and v.deviating == (("p1", 0),)
    (v,) = check_attribute_consistency(groups(attr_stream("FM")), "gender")
    assert v.majority == "F"


def test_modify_edit_and_apply():
    stream = attr_stream("MMF")
    res = run_consistency(stream, ConsistencyConfig(**CFG))
    assert res.edits == [CorrectionEdit(MODIFY, "p2", 0, "gender", "M", pytest.approx(0.2),
                                        res.attribute_violations[0])]
    fixed = apply_edits(stream, res.edits)
    assert [r.boxes[0].attrs["gender"] for r in fixed] == ["M", "M", "M"]
    assert fixed[:2] == stream[:2]


def test_consensus_fn_override():
    cfg = ConsistencyConfig(**CFG, consensus_fn=lambda key, vals: "F")
    res = run_consistency(attr_stream("MMF"), cfg)
    assert {(e.point_id, e.value) for e in res.edits} == {("p0", "F"), ("p1", "F")}


# -- temporal ----------------------------------------------------------------

def test_flicker_pattern():
    tl = {"car": [Interval(0.0, 1.0), Interval(1.3, 2.0)]}
    (v,) = check_temporal_consistency(tl, 1.0, 0.0, 2.0)
    assert v.pattern == FLICKER and v.end - v.start == pytest.approx(0.3)
    # with stream left after it, the 0.7 s second segment is short as well
    vs = check_temporal_consistency(tl, 1.0, 0.0, 5.0)
    assert sorted(v.pattern for v in vs) == [FLICKER, SHORT]


def test_long_appearance_ok():
    assert check_temporal_consistency({"a": [Interval(1.0, 6.0)]}, 1.0, 0.0, 10.0) == []


def test_short_appearance():
    (v,) = check_temporal_consistency({"a": [Interval(3.0, 3.2)]}, 1.0, 0.0, 10.0)
    assert v.pattern == SHORT


def test_final_disappearance_needs_tail():
    # disappears 0.5 s before the stream ends: not a transition with t_persist=1
    assert check_temporal_consistency({"a": [Interval(3.0, 3.2)]}, 1.0, 0.0, 3.7) == []
    assert len(check_temporal_consistency({"a": [Interval(3.0, 3.2)]}, 1.0, 0.0, 4.2)) == 1


def test_present_at_start_is_not_an_appearance():
    assert check_temporal_consistency({"a": [Interval(0.0, 0.2)]}, 1.0, 0.0, 10.0) == []


def test_modes():
    tl = {"a": [Interval(0.0, 1.0), Interval(1.2, 1.3), Interval(5.0, 9.0)]}
    both = check_temporal_consistency(tl, 1.0, 0.0, 10.0)
    assert sorted(v.pattern for v in both) == [FLICKER, SHORT]
    assert [v.pattern for v in check_temporal_consistency(tl, 1.0, 0.0, 10.0, "flicker")] == [FLICKER]
    assert [v.pattern for v in check_temporal_consistency(tl, 1.0, 0.0, 10.0, "short")] == [SHORT]


# -- corrections -------------------------------------------------------------

def test_interpolation_by_hand():
    a = DetectionBox(0, 0, 10, 10, "car", 0.8)
    b = DetectionBox(30, 6, 16, 10, "car", 0.6)
    history = [(0.0, a), (0.3, b)]
    gap = Gap("t", 0.0, 0.3, ("p1", "p2"), (0.1, 0.2))
    m1, m2 = interpolate_boxes(history, gap)
    assert (m1.x, m1.y, m1.w, m1.h) == pytest.approx((10, 2, 12, 10))
    assert (m2.x, m2.y, m2.w, m2.h) == pytest.approx((20, 4, 14, 10))
    assert m1.confidence == pytest.approx(0.7)


def flicker_stream():
    present = [1] * 10 + [0, 0] + [1] * 10
    return stream_of([[face("X")] if p else [] for p in present])


def test_flicker_fill_restores_contiguity():
    stream = flicker_stream()
    cfg = ConsistencyConfig(**CFG, t_persist=1.0, weak_label_fn=copy_previous)
    res = run_consistency(stream, cfg)
    assert [e.kind for e in res.edits] == [ADD, ADD]
    assert [e.point_id for e in res.edits] == ["p10", "p11"]
    again = run_consistency(apply_edits(stream, res.edits), cfg)
    assert again.violations == []
    assert len(again.timelines["X"]) == 1


def test_flicker_without_weak_label_is_uncorrectable():
    res = run_consistency(flicker_stream(), ConsistencyConfig(**CFG, t_persist=1.0))
    assert res.edits == [] and res.uncorrectable == res.temporal_violations


def test_short_appearance_removed():
    present = [0] * 10 + [1] * 3 + [0] * 20
    stream = stream_of([[face("X")] if p else [] for p in present])
    res = run_consistency(stream, ConsistencyConfig(**CFG, t_persist=1.0))
    assert [(e.kind, e.point_id) for e in res.edits] == [(REMOVE, f"p{i}") for i in (10, 11, 12)]
    assert all(not r.boxes for r in apply_edits(stream, res.edits))


def test_short_next_to_unfilled_flicker_is_left_alone():
    present = [1] * 20 + [0, 0] + [1] * 2 + [0] * 20
    stream = stream_of([[face("X")] if p else [] for p in present])
    res = run_consistency(stream, ConsistencyConfig(**CFG, t_persist=1.0))
    assert res.edits == []
    assert {v.pattern for v in res.uncorrectable} == {FLICKER, SHORT}


def test_synthesized_outputs_take_consensus_attributes():
    frames = [[face("X", gender="M")]] * 10 + [[]] + [[face("X", gender="F")]] + [[face("X", gender="M")]] * 10
    stream = stream_of(frames)
    cfg = ConsistencyConfig(**CFG, t_persist=1.0, weak_label_fn=lambda h, g: [face("X", gender="F")])
    res = run_consistency(stream, cfg)
    added = [e for e in res.edits if e.kind == ADD]
    assert [e.value.attrs["gender"] for e in added] == ["M"]
    assert run_consistency(apply_edits(stream, res.edits), cfg).violations == []


def test_apply_edits_conflicts_and_identity():
    stream = attr_stream("MMF")
    assert apply_edits(stream, []) == stream
    e = CorrectionEdit(MODIFY, "p2", 0, "gender", "M")
    with pytest.raises(EditConflictError):
        apply_edits(stream, [e, CorrectionEdit(MODIFY, "p2", 0, "gender", "X")])
    with pytest.raises(EditConflictError):
        apply_edits(stream, [e, CorrectionEdit(REMOVE, "p2", 0)])
    with pytest.raises(ValueError):
        apply_edits(stream, [CorrectionEdit(REMOVE, "p9", 0)])
    labels = [PredictionRecord("a", 0.0, label=ClassLabel("N", 0.5))]
    with pytest.raises(ValueError):
        apply_edits(labels, [CorrectionEdit(ADD, "a", None, value=ClassLabel("N", 0.5))])


def test_generated_assertions_in_engine():
    stream = flicker_stream()
    reg = AssertionRegistry()
    add_consistency_assertion(ConsistencyConfig(**CFG, t_persist=1.0, attr_keys=("gender",)), reg)
    m, rep = evaluate_stream(stream, reg)
    assert reg.names == ["consistency.gender", "consistency.temporal"]
    assert [pid for pid, _ in rep.assertions[1].flagged] == ["p10", "p11"]
    assert evaluate_stream([], reg)[0].scores.shape == (0, 2)


# -- oracle comparisons --------------------------------------------------------

def check_against_oracle(seed):
    rng = np.random.default_rng(seed)
    stream, t = random_stream(rng, max_records=60)
    mode = str(rng.choice(["both", "flicker", "short"]))
    res = run_consistency(stream, ConsistencyConfig(**CFG, t_persist=t, temporal_mode=mode))
    got = {(v.identifier, v.pattern, v.start, v.end, v.first, v.last) for v in res.temporal_violations}
    assert len(got) == len(res.temporal_violations)
    assert got == oracle_temporal(stream, t, mode)
    attrs = {(v.identifier, v.key): (v.majority, sorted(v.deviating)) for v in res.attribute_violations}
    assert attrs == oracle_attribute(stream)
    if mode == "both":
        assert bool(got) == windowed_violation_exists(stream, t)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_engine_matches_oracle(seed):
    check_against_oracle(seed)


@given(st.integers(0, 2**32 - 1), st.booleans())
@settings(max_examples=100, deadline=None)
def test_corrections_reach_fixpoint(seed, fill):
    rng = np.random.default_rng(seed)
    stream, t = random_stream(rng, max_records=60)
    cfg = ConsistencyConfig(**CFG, t_persist=t, weak_label_fn=copy_previous if fill else None)
    res = run_consistency(stream, cfg)
    again = run_consistency(apply_edits(stream, res.edits), cfg)
    assert again.attribute_violations == []
    left = {(v.identifier, v.pattern, v.first, v.last) for v in again.temporal_violations}
    unfixed = {(v.identifier, v.pattern, v.first, v.last) for v in res.uncorrectable}
    assert left <= unfixed
    if fill:
        assert left == set()
