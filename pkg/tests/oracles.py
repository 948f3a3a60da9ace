"""Independent reference implementations used by the tests.

Nothing here imports the code under test beyond plain data types, so a bug
in the library cannot leak into its own oracle.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np

from modelassert.records import DetectionBox, PredictionRecord

FLICKER, SHORT = "flicker", "short-appearance"


# -- random consistency streams --------------------------------------------

def random_stream(rng: np.random.Generator, max_records=200, max_ids=5, max_keys=3):
    """Records whose outputs carry ``attrs = {"id": ..., "k0": ...}``.

    Presence per identifier follows a sticky Markov chain so runs, short
    blips and gaps all occur; attribute values are mostly one value per
    identifier with occasional deviations.
    """
    n = int(rng.integers(0, max_records + 1))
    n_ids = int(rng.integers(1, max_ids + 1))
    n_keys = int(rng.integers(0, max_keys + 1))
    stay = rng.uniform(0.6, 0.97, size=n_ids)
    present = rng.random(n_ids) < 0.5
    base = {(i, k): f"v{rng.integers(3)}" for i in range(n_ids) for k in range(n_keys)}
    noise = rng.uniform(0, 0.3)
    t = 0.0
    stream = []
    for p in range(n):
        t += float(rng.choice([0.1, 0.1, 0.2, 0.5]))
        t = round(t, 6)
        outputs = []
        for i in range(n_ids):
            if rng.random() > stay[i]:
                present[i] = not present[i]
            if not present[i]:
                continue
            copies = 2 if rng.random() < 0.03 else 1
            for _ in range(copies):
                attrs = {"id": f"i{i}"}
                for k in range(n_keys):
                    if rng.random() < 0.9:  # keys are sometimes missing
                        attrs[f"k{k}"] = base[i, k] if rng.random() > noise else f"v{rng.integers(3)}"
                outputs.append(DetectionBox(float(i * 50), 0.0, 10.0, 10.0, "obj", 0.9, attrs))
        stream.append(PredictionRecord(f"p{p}", t, boxes=outputs))
    t_persist = float(rng.choice([0.0, round(float(rng.uniform(0.05, 3.0)), 3)]))
    return stream, t_persist


def id_of(out):
    return out.attrs["id"]


def attrs_of(out):
    return [(k, v) for k, v in out.attrs.items() if k != "id"]


def copy_previous(history, gap):
    """Weak label that repeats the last output seen before the gap."""
    before = [o for t, o in history if t <= gap.start]
    return [before[-1]] * len(gap.times) if before else None


# -- brute-force consistency checker ---------------------------------------

def oracle_attribute(stream):
    """{(identifier, key): (majority, sorted deviating (pid, index))}."""
    seen = {}
    for rec in stream:
        for j, out in enumerate(rec.outputs):
            for k, v in attrs_of(out):
                seen.setdefault((id_of(out), k), []).append((v, rec.point_id, j))
    result = {}
    for key, vals in seen.items():
        distinct = {v for v, _, _ in vals}
        if len(distinct) < 2:
            continue
        counts = Counter(v for v, _, _ in vals)
        top = max(counts.values())
        # earliest-seen among the tied values
        major = min((v for v in distinct if counts[v] == top),
                    key=lambda v: next(i for i, (w, _, _) in enumerate(vals) if w == v))
        result[key] = (major, sorted((pid, j) for v, pid, j in vals if v != major))
    return result


def oracle_temporal(stream, t_persist, mode="both"):
    """Scan positions of a presence bitmap; return a set of
    (identifier, pattern, start, end, first, last)."""
    if t_persist <= 0 or not stream:
        return set()
    times = [r.timestamp for r in stream]
    n = len(stream)
    ids = sorted({id_of(o) for r in stream for o in r.outputs})
    out = set()
    for ident in ids:
        here = [any(id_of(o) == ident for o in r.outputs) for r in stream]
        events = []  # (time, kind, position)
        last_present = max(p for p in range(n) if here[p])
        for p in range(n):
            if here[p] and p > 0 and not here[p - 1]:
                events.append((times[p], "appear", p))
            if here[p] and p < n - 1 and not here[p + 1]:
                final = not any(here[p + 1:])
                if not final or times[-1] - times[p] >= t_persist:
                    events.append((times[p], "disappear", p))
        assert last_present >= 0
        for (ta, ka, pa), (tb, kb, pb) in zip(events, events[1:]):
            if tb - ta >= t_persist:
                continue
            if ka == "disappear" and kb == "appear" and mode != "short":
                out.add((ident, FLICKER, ta, tb, pa + 1, pb - 1))
            if ka == "appear" and kb == "disappear" and mode != "flicker":
                out.add((ident, SHORT, ta, tb, pa, pb))
    return out


def windowed_violation_exists(stream, t_persist):
    """True iff some half-open window of length ``t_persist`` holds two
    transitions of one identifier (transitions as in :func:`oracle_temporal`)."""
    if t_persist <= 0 or not stream:
        return False
    times = [r.timestamp for r in stream]
    n = len(stream)
    for ident in {id_of(o) for r in stream for o in r.outputs}:
        here = [any(id_of(o) == ident for o in r.outputs) for r in stream]
        ev = []
        for p in range(n):
            if here[p] and p > 0 and not here[p - 1]:
                ev.append(times[p])
            if here[p] and p < n - 1 and not here[p + 1]:
                if any(here[p + 1:]) or times[-1] - times[p] >= t_persist:
                    ev.append(times[p])
        for s in ev:
            if sum(1 for e in ev if s <= e < s + t_persist) >= 2:
                return True
    return False


# -- small numeric oracles ---------------------------------------------------

def box_iou(a, b):
    ax1, ay1, ax2, ay2 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx1, by1, bx2, by2 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def best_subset(reward, arms, k):
    return max((frozenset(c) for c in itertools.combinations(arms, k)), key=reward)


def coverage_reward(sets, weights):
    """Weighted coverage: a monotone submodular set function."""
    def f(chosen):
        covered = set().union(*(sets[a] for a in chosen)) if chosen else set()
        return float(sum(weights[e] for e in covered))
    return f


def residual_closed_form(rate, gamma, labels):
    return rate * math.exp(-gamma * labels)
