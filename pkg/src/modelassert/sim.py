"""Synthetic active-learning environment.

Each point is either clean or erroneous in one of K latent modes. Labeling a
mode-k error lowers that mode's error rate exponentially, so the expected
trigger reduction is concave in the number of labels per mode. Assertions
fire on errors with per-mode detection probabilities; noise assertions also
fire at random regardless of errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .bandit import (CCMAB, RANDOM, UNCERTAINTY, RoundState, bal_select, baseline_select)
from .engine import SeverityMatrix
from .records import ClassLabel, PredictionRecord

POLICIES = ("bal", "random", "uncertainty", "uniform", "ccmab", "oracle")


@dataclass
class SimConfig:
    """``detection[m][k]`` is the chance assertion m fires on a mode-k error;
    ``noise_rates[m]`` the chance it fires on any point independently."""

    n_points: int = 1000
    detection: list[list[float]] = field(default_factory=lambda: [[0.9, 0.05], [0.05, 0.9], [0.0, 0.0]])
    initial_rates: list[float] = field(default_factory=lambda: [0.15, 0.15])
    decay: list[float] = field(default_factory=lambda: [0.02, 0.02])
    noise_rates: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.05])
    high_conf_error_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.detection, dtype=float)
        if p.ndim != 2 or p.shape[1] != len(self.initial_rates):
            raise ValueError("detection must be d x K with K = len(initial_rates)")
        if len(self.decay) != p.shape[1] or len(self.noise_rates) != p.shape[0]:
            raise ValueError("decay needs K entries and noise_rates d entries")
        for name, arr in (("detection", p), ("initial_rates", self.initial_rates),
                          ("noise_rates", self.noise_rates)):
            a = np.asarray(arr, dtype=float)
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError(f"{name} must be probabilities")
        if sum(self.initial_rates) > 1:
            raise ValueError("initial error rates must sum to at most 1")
        if any(g < 0 for g in self.decay):
            raise ValueError("decay rates must be non-negative")

    @property
    def d(self) -> int:
        return len(self.detection)

    @property
    def k(self) -> int:
        return len(self.initial_rates)

    def to_dict(self) -> dict:
        return asdict(self)


def reference_config(seed: int = 0) -> SimConfig:
    """Two informative assertions (one per error mode) and one pure-noise
    assertion. Mode 0 is learned faster than mode 1."""
    return SimConfig(
        n_points=1000,
        detection=[[0.9, 0.05], [0.05, 0.9], [0.0, 0.0]],
        initial_rates=[0.25, 0.25],
        decay=[0.04, 0.01],
        noise_rates=[0.0, 0.0, 0.1],
        seed=seed,
    )


@dataclass
class SimState:
    labels: np.ndarray
    t: int = 0
    seed: int = 0

    @classmethod
    def start(cls, config: SimConfig, seed: int | None = None) -> SimState:
        return cls(np.zeros(config.k), 0, config.seed if seed is None else seed)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.t, stream])

    def advance(self, new_labels: Sequence[float]) -> SimState:
        return SimState(self.labels + np.asarray(new_labels, dtype=float), self.t + 1, self.seed)


def residual_rates(config: SimConfig, labels: Sequence[float]) -> np.ndarray:
    return np.asarray(config.initial_rates) * np.exp(-np.asarray(config.decay) * np.asarray(labels, dtype=float))


@dataclass
class RoundData:
    records: list[PredictionRecord]
    matrix: SeverityMatrix
    confidences: np.ndarray
    errors: np.ndarray
    modes: np.ndarray

    @property
    def point_ids(self) -> list[str]:
        return self.matrix.point_ids


def sim_round(config: SimConfig, state: SimState) -> RoundData:
    """Draw one round of points; ``modes`` is -1 for clean points."""
    rng = state.rng(0)
    n, d = config.n_points, config.d
    rates = residual_rates(config, state.labels)
    edges = np.cumsum(rates)
    u = rng.random(n)
    modes = np.searchsorted(edges, u, side="right")
    modes[modes >= config.k] = -1
    errors = modes >= 0

    p = np.asarray(config.detection, dtype=float)
    fire_p = np.zeros((n, d))
    fire_p[errors] = p[:, modes[errors]].T
    signal = rng.random((n, d)) < fire_p
    noise = rng.random((n, d)) < np.asarray(config.noise_rates)
    scores = np.where(signal, rng.uniform(0.5, 1.0, (n, d)), 0.0)
    scores = np.where(noise & ~signal, rng.uniform(0.1, 0.6, (n, d)), scores)

    high = rng.random(n) < config.high_conf_error_fraction
    conf = np.where(errors & ~high, rng.beta(2, 5, n), rng.beta(5, 2, n))

    ids = [f"t{state.t}-{i:05d}" for i in range(n)]
    records = [PredictionRecord(pid, float(i), label=ClassLabel("predicted", float(c)))
               for i, (pid, c) in enumerate(zip(ids, conf))]
    names = [f"a{m}" for m in range(d)]
    return RoundData(records, SeverityMatrix(ids, names, scores, state.t), conf, errors, modes)


def expected_reward(config: SimConfig, state: SimState, new_counts: Sequence[float]) -> float:
    """Expected error-rate reduction after adding ``new_counts`` labels per mode."""
    total = state.labels + np.asarray(new_counts, dtype=float)
    init = np.asarray(config.initial_rates)
    return float(np.sum(init * (1.0 - np.exp(-np.asarray(config.decay) * total))))


def expected_triggers(config: SimConfig, labels: Sequence[float]) -> float:
    """Mean total trigger count per round given cumulative labels."""
    rates = residual_rates(config, labels)
    p = np.asarray(config.detection, dtype=float)
    q = np.asarray(config.noise_rates, dtype=float)
    per_mode = np.array([np.sum(1 - (1 - p[:, k]) * (1 - q)) for k in range(config.k)])
    fire = np.sum(rates * per_mode) + (1 - rates.sum()) * q.sum()
    return float(config.n_points * fire)


class ModeReward:
    """Set reward for CC-MAB in simulation: arms map to their hidden mode."""

    def __init__(self, config: SimConfig, state: SimState, modes: np.ndarray):
        self.config = config
        self.state = state
        self.modes = np.asarray(modes)

    def _counts(self, arms) -> np.ndarray:
        counts = np.zeros(self.config.k)
        for j in arms:
            if self.modes[j] >= 0:
                counts[self.modes[j]] += 1
        return counts

    def __call__(self, arms) -> float:
        return expected_reward(self.config, self.state, self._counts(arms))

    def gains(self, arms, candidates) -> np.ndarray:
        counts = self._counts(arms)
        base = expected_reward(self.config, self.state, counts)
        per_mode = np.array([expected_reward(self.config, self.state, counts + np.eye(self.config.k)[k]) - base
                             for k in range(self.config.k)])
        m = self.modes[np.asarray(candidates)]
        return np.where(m >= 0, per_mode[np.maximum(m, 0)], 0.0)


def _oracle_pick(config: SimConfig, state: SimState, data: RoundData, budget: int) -> list[int]:
    """Greedy on expected trigger reduction using the hidden error modes."""
    p = np.asarray(config.detection, dtype=float)
    q = np.asarray(config.noise_rates, dtype=float)
    weight = np.array([np.sum(1 - (1 - p[:, k]) * (1 - q)) - q.sum() for k in range(config.k)])
    weight = np.asarray(config.initial_rates) * weight
    avail = {k: list(np.flatnonzero(data.modes == k)) for k in range(config.k)}
    labels = state.labels.astype(float).copy()
    picks = []
    gamma = np.asarray(config.decay)
    for _ in range(budget):
        gain = weight * (np.exp(-gamma * labels) - np.exp(-gamma * (labels + 1)))
        ks = [k for k in range(config.k) if avail[k]]
        if not ks:
            break
        k = max(ks, key=lambda i: (gain[i], -i))
        picks.append(int(avail[k].pop(0)))
        labels[k] += 1
    return picks


@dataclass
class ExperimentResult:
    policy: str
    triggers: np.ndarray        # (seeds, rounds + 1) total trigger counts
    per_assertion: np.ndarray   # (seeds, rounds + 1, d)
    residual: np.ndarray        # (seeds, rounds + 1) summed residual error rate
    labels: np.ndarray          # (seeds, rounds + 1) cumulative labels

    def mean_curve(self) -> dict:
        return {
            "policy": self.policy,
            "triggers": self.triggers.mean(axis=0).tolist(),
            "per_assertion": self.per_assertion.mean(axis=0).tolist(),
            "residual": self.residual.mean(axis=0).tolist(),
            "labels": self.labels.mean(axis=0).tolist(),
        }


def _select(policy, data, state, budget, prev_counts, bandit, config, sel_seed):
    ids = data.point_ids
    index = {p: i for i, p in enumerate(ids)}
    if policy == "random":
        return [index[p] for p in baseline_select(RANDOM, budget, ids, rng=sel_seed)]
    if policy == "uncertainty":
        return [index[p] for p in baseline_select(UNCERTAINTY, budget, ids, data.confidences.tolist())]
    if policy in ("bal", "uniform"):
        rs = RoundState(state.t, budget, prev_counts, data.matrix.trigger_counts().tolist(), RANDOM,
                        explore_fraction=0.25 if policy == "bal" else 1.0)
        return [index[p] for p in bal_select(rs, data.matrix, data.confidences.tolist(), seed=sel_seed).chosen]
    if policy == "ccmab":
        s = data.matrix.scores
        top = s.max(axis=0)
        ctx = np.divide(s, top, out=np.zeros_like(s), where=top > 0)
        return bandit.select(ctx, budget, ModeReward(config, state, data.modes))
    if policy == "oracle":
        return _oracle_pick(config, state, data, budget)
    raise ValueError(f"unknown policy {policy!r}")


def run_experiment(policy: str, config: SimConfig, rounds: int = 5, budget: int = 100,
                   n_seeds: int = 30) -> ExperimentResult:
    """Label ``budget`` points per round for ``rounds`` rounds, re-drawing the
    data after each; curves have ``rounds + 1`` points. Seeds are shared
    across policies so curves are paired."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    trig = np.zeros((n_seeds, rounds + 1))
    per = np.zeros((n_seeds, rounds + 1, config.d))
    resid = np.zeros((n_seeds, rounds + 1))
    labels = np.zeros((n_seeds, rounds + 1))
    for s in range(n_seeds):
        state = SimState.start(config, seed=config.seed * 1_000_003 + s)
        bandit = CCMAB(h=2, seed=[state.seed, 7])
        prev = None
        spent = 0
        for t in range(rounds + 1):
            data = sim_round(config, state)
            counts = data.matrix.trigger_counts()
            per[s, t] = counts
            trig[s, t] = counts.sum()
            resid[s, t] = residual_rates(config, state.labels).sum()
            labels[s, t] = spent
            if t == rounds:
                break
            picks = _select(policy, data, state, budget, prev, bandit, config,
                            sel_seed=[state.seed, t, 1]) if budget > 0 else []
            spent += len(picks)
            new = np.zeros(config.k)
            for i in picks:
                if data.modes[i] >= 0:
                    new[data.modes[i]] += 1
            prev = counts.tolist()
            state = state.advance(new)
    return ExperimentResult(policy, trig, per, resid, labels)


def labels_to_target(triggers: Sequence[float], labels: Sequence[float], fraction: float = 0.5) -> float:
    """Cumulative labels at which the mean trigger curve first reaches
    ``fraction`` of its initial value (linear interpolation between rounds);
    inf if it never does."""
    target = fraction * triggers[0]
    for i, v in enumerate(triggers):
        if v <= target:
            if i == 0:
                return float(labels[0])
            a, b = triggers[i - 1], v
            w = (a - target) / (a - b)
            return float(labels[i - 1] + w * (labels[i] - labels[i - 1]))
    return math.inf
