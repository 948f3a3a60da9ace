"""Choosing which flagged points to label each round.

``bal_select`` spreads the budget over assertions by how much each one's
trigger count fell since the previous round, keeps a fixed share for
uniform exploration, and falls back to a baseline when nothing improves.
``CCMAB`` is the contextual combinatorial bandit it simplifies; it needs a
queryable reward and is only usable in simulation.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .engine import SeverityMatrix

RANDOM = "random"
UNCERTAINTY = "uncertainty"
BASELINES = (RANDOM, UNCERTAINTY)

ROUND_ZERO = "round-zero"
BAL = "bal"
FALLBACK = "fallback"


@dataclass
class RoundState:
    t: int
    budget: int
    prev_counts: Sequence[int] | None = None
    cur_counts: Sequence[int] | None = None
    baseline: str = RANDOM
    explore_fraction: float = 0.25
    fallback_threshold: float = 0.01

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("round index must be non-negative")
        if not 0.0 <= self.explore_fraction <= 1.0:
            raise ValueError("explore_fraction must lie in [0, 1]")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        for counts in (self.prev_counts, self.cur_counts):
            if counts is not None and any(c < 0 for c in counts):
                raise ValueError("trigger counts must be non-negative")


@dataclass
class SelectionResult:
    """``allocation[m]`` counts picks made through assertion m by the
    proportional (or round-zero) branch, ``explore[m]`` those made by the
    exploration branch."""

    chosen: list[str]
    allocation: list[int]
    explore: list[int]
    baseline_picks: int
    mode: str
    reductions: list[float] | None = None
    sources: list[str] = field(default_factory=list)

    @property
    def totals(self) -> list[int]:
        return [a + e for a, e in zip(self.allocation, self.explore)]


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def marginal_reduction(prev_counts: Sequence[int], cur_counts: Sequence[int]) -> np.ndarray:
    """Relative drop in each assertion's trigger count, floored at zero."""
    prev = np.asarray(prev_counts, dtype=float)
    cur = np.asarray(cur_counts, dtype=float)
    if prev.shape != cur.shape:
        raise ValueError(f"count vectors differ in length: {prev.shape} vs {cur.shape}")
    return np.maximum(prev - cur, 0.0) / np.maximum(prev, 1.0)


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integer split of ``total`` proportional to ``weights``; leftover units
    go to the largest fractional parts, ties to the lower index."""
    w = [Fraction(float(x)) for x in weights]
    s = sum(w)
    if total <= 0 or s <= 0:
        return [0] * len(w)
    quotas = [x * total / s for x in w]
    base = [math.floor(q) for q in quotas]
    left = total - sum(base)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def baseline_select(kind: str, budget: int, point_ids: Sequence[str],
                    confidences: Sequence[float] | None = None, rng=None) -> list[str]:
    """Random or least-confident selection; asks for more than exist -> all."""
    k = min(max(budget, 0), len(point_ids))
    if kind == RANDOM:
        idx = _as_rng(rng).choice(len(point_ids), size=k, replace=False) if k else []
        return [point_ids[i] for i in idx]
    if kind == UNCERTAINTY:
        if confidences is None:
            raise ValueError("uncertainty sampling needs confidences")
        if len(confidences) != len(point_ids):
            raise ValueError("confidences must align with point_ids")
        order = sorted(range(len(point_ids)), key=lambda i: (confidences[i], point_ids[i]))
        return [point_ids[i] for i in order[:k]]
    raise ValueError(f"unknown baseline {kind!r}")


def _ranked_pool(matrix: SeverityMatrix, m: int, excluded: set[str]) -> list[str]:
    col = matrix.scores[:, m]
    idx = [i for i in np.flatnonzero(col > 0) if matrix.point_ids[i] not in excluded]
    idx.sort(key=lambda i: (-col[i], matrix.point_ids[i]))
    return [matrix.point_ids[i] for i in idx]


class _Picker:
    def __init__(self, pools: list[list[str]], rng: np.random.Generator):
        self.pools = pools
        self.rng = rng
        self.chosen: list[str] = []
        self.taken: set[str] = set()
        self.sources: list[str] = []

    def remaining(self, m: int) -> list[int]:
        return [k for k, p in enumerate(self.pools[m]) if p not in self.taken]

    def take(self, pid: str, source: str):
        self.chosen.append(pid)
        self.taken.add(pid)
        self.sources.append(source)

    def uniform(self, m: int, count: int, source: str) -> int:
        done = 0
        while done < count:
            rem = self.remaining(m)
            if not rem:
                break
            self.take(self.pools[m][rem[self.rng.integers(len(rem))]], source)
            done += 1
        return done

    def by_rank(self, m: int, count: int, source: str) -> int:
        """Sample without replacement; rank k (1-based) of n gets weight n - k + 1."""
        n = len(self.pools[m])
        done = 0
        while done < count:
            rem = self.remaining(m)
            if not rem:
                break
            w = np.array([n - k for k in rem], dtype=float)
            j = self.rng.choice(len(rem), p=w / w.sum())
            self.take(self.pools[m][rem[j]], source)
            done += 1
        return done


def bal_select(state: RoundState, matrix: SeverityMatrix, confidences: Sequence[float] | None = None,
               seed=0, exclude: Sequence[str] = ()) -> SelectionResult:
    """Choose up to ``state.budget`` points for labeling.

    Round 0 splits the budget evenly over assertions and samples uniformly
    within each. Later rounds fall back to ``state.baseline`` when every
    reduction is below ``fallback_threshold``. Otherwise
    ``floor(explore_fraction * budget)`` picks go to uniform exploration and
    the rest are split proportionally to the reductions, sampling by severity
    rank. Shortfalls from exhausted pools are redistributed, then handed to
    the baseline. ``exclude`` removes already-labelled points from every pool.
    """
    budget = state.budget
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if matrix.round_tag != state.t:
        raise ValueError(f"matrix is tagged round {matrix.round_tag}, state is round {state.t}")
    d = matrix.d
    excluded = set(exclude)
    eligible = [p for p in matrix.point_ids if p not in excluded]
    conf_of = None
    if confidences is not None:
        if len(confidences) != matrix.n:
            raise ValueError("confidences must align with the matrix rows")
        conf_of = dict(zip(matrix.point_ids, confidences))
    baseline_ok = state.baseline == RANDOM or conf_of is not None

    def run_baseline(k, pool, rng):
        conf = [conf_of[p] for p in pool] if conf_of is not None else None
        return baseline_select(state.baseline, k, pool, conf, rng)

    pools = [_ranked_pool(matrix, m, excluded) for m in range(d)]
    if not any(pools) and not baseline_ok:
        raise ValueError("no flagged points and the baseline is unavailable")

    r = None
    if state.t > 0:
        if state.prev_counts is None:
            raise ValueError("rounds after the first need prev_counts")
        cur = state.cur_counts if state.cur_counts is not None else matrix.trigger_counts()
        if len(state.prev_counts) != d or len(cur) != d:
            raise ValueError(f"count vectors must have length d={d}")
        r = marginal_reduction(state.prev_counts, cur)
        if np.all(r < state.fallback_threshold):
            if not baseline_ok:
                raise ValueError("fallback needed but the baseline is unavailable")
            chosen = run_baseline(budget, eligible, seed)
            return SelectionResult(chosen, [0] * d, [0] * d, len(chosen), FALLBACK,
                                   r.tolist(), ["baseline"] * len(chosen))

    rng = _as_rng(seed)
    picker = _Picker(pools, rng)
    explore = [0] * d
    alloc = [0] * d
    if state.t == 0:
        weights = [1.0] * d
        target = largest_remainder(weights, budget)
        sample = picker.uniform
        mode = ROUND_ZERO
    else:
        weights = list(r)
        for _ in range(math.floor(state.explore_fraction * budget)):
            avail = [m for m in range(d) if picker.remaining(m)]
            if not avail:
                break
            m = avail[rng.integers(len(avail))]
            explore[m] += picker.uniform(m, 1, f"explore:{m}")
        target = largest_remainder(weights, budget - len(picker.chosen))
        sample = picker.by_rank
        mode = BAL

    while True:
        short = 0
        for m in range(d):
            if target[m]:
                got = sample(m, target[m], f"assertion:{m}")
                alloc[m] += got
                short += target[m] - got
        if not short:
            break
        open_w = [w if w > 0 and picker.remaining(m) else 0.0 for m, w in enumerate(weights)]
        target = largest_remainder(open_w, short)
        if not any(target):
            break

    n_base = 0
    left = budget - len(picker.chosen)
    if left > 0 and baseline_ok:
        pool = [p for p in eligible if p not in picker.taken]
        for p in run_baseline(left, pool, rng):
            picker.take(p, "baseline")
            n_base += 1
    return SelectionResult(picker.chosen, alloc, explore, n_base, mode,
                           None if r is None else r.tolist(), picker.sources)


# -- CC-MAB ----------------------------------------------------------------

def default_schedule(t: int) -> float:
    return math.ceil(math.log(t + 1))


def context_cubes(contexts: np.ndarray, h: int) -> list[tuple[int, ...]]:
    """Hypercube (of ``h**d``) containing each context vector."""
    x = np.asarray(contexts, dtype=float)
    if x.ndim != 2:
        raise ValueError("contexts must be an (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("contexts must be finite")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("contexts must lie in [0, 1]")
    cells = np.minimum(np.floor(x * h).astype(int), h - 1)
    return [tuple(row) for row in cells]


def greedy_select(reward: Callable[[frozenset], float], candidates: Sequence[int], budget: int,
                  start: Sequence[int] = ()) -> list[int]:
    """Grow ``start`` by repeatedly adding the arm with the largest marginal
    gain R(S + j) - R(S); ties go to the lowest arm index.

    A reward object may provide ``gains(S, candidates)`` returning all
    marginal gains at once.
    """
    chosen = list(start)
    current = frozenset(chosen)
    pool = sorted(set(candidates) - current)
    gains = getattr(reward, "gains", None)
    while len(chosen) - len(start) < budget and pool:
        if gains is not None:
            best = pool[int(np.argmax(gains(current, pool)))]
        else:
            base = reward(current)
            best, best_gain = None, -math.inf
            for j in pool:
                gain = reward(current | {j}) - base
                if gain > best_gain:
                    best, best_gain = j, gain
        chosen.append(best)
        current = current | {best}
        pool.remove(best)
    return chosen


class CCMAB:
    """Explore arms in under-played context cells, otherwise choose greedily
    by marginal gain. Play counts persist across calls to ``select``."""

    def __init__(self, h: int = 2, schedule: Callable[[int], float] = default_schedule, seed=0):
        if h < 1:
            raise ValueError("partition resolution h must be at least 1")
        self.h = h
        self.schedule = schedule
        self.rng = _as_rng(seed)
        self.t = 0
        self.plays: dict[tuple[int, ...], int] = defaultdict(int)

    def select(self, contexts: np.ndarray, budget: int, reward: Callable[[frozenset], float]) -> list[int]:
        cubes = context_cubes(contexts, self.h)
        self.t += 1
        k = self.schedule(self.t)
        under = [i for i, c in enumerate(cubes) if self.plays[c] < k]
        chosen: list[int] = []
        if under:
            perm = self.rng.permutation(len(under))
            chosen = [under[i] for i in perm[:budget]]
        if len(chosen) < budget:
            chosen = greedy_select(reward, range(len(cubes)), budget - len(chosen), start=chosen)
        for i in chosen:
            self.plays[cubes[i]] += 1
        return chosen


def ccmab_select(contexts, reward: Callable[[frozenset], float], rounds: int, budgets,
                 h: int = 2, schedule: Callable[[int], float] = default_schedule, seed=0) -> list[list[int]]:
    """Run ``rounds`` rounds. ``contexts`` is one (n, d) array or a sequence
    of them per round; ``budgets`` an int or per-round sequence."""
    bandit = CCMAB(h, schedule, seed)
    out = []
    for t in range(rounds):
        ctx = contexts[t] if isinstance(contexts, (list, tuple)) else contexts
        b = budgets[t] if isinstance(budgets, (list, tuple)) else budgets
        out.append(bandit.select(ctx, b, reward))
    return out
