"""Synthetic streams and the size / power / detection-delay experiment driver.

Streams are Gaussian with AR(1) covariance ``Sigma_ij = rho^|i-j|`` and a mean
shift ``sqrt(delta / r)`` on the first ``r`` coordinates from ``k_star`` on.
Each replication re-estimates the Phase-I norms from its own first ``n`` rows
and computes the statistic trajectories once; every decision rule (L2, Lq,
combined; any boundary) is then read off the same trajectories.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .adaptive import adjusted_alpha, compute_paths, critical_values, first_alarm
from .sigma_norm import PhaseIError, estimate_norms
from .streamcore import BOUNDARIES, ConfigError, MonitorError, Observation, horizon

MAX_EXCLUDED_FRACTION = 0.01


class ExperimentError(MonitorError, RuntimeError):
    pass


def default_k_star(n: int) -> int:
    return math.floor(1.25 * n) + 1


@dataclass
class ScenarioSpec:
    n: int = 100
    p: int = 50
    T: float = 2.0
    rho: float = 0.0
    delta: float = 0.0
    r_sparsity: int = 1
    k_star: int | None = None
    reps: int = 500
    alpha: float = 0.1
    boundary: str = "T1"
    q_set: tuple = (2, 6)
    seed: int = 0

    def __post_init__(self):
        self.q_set = tuple(sorted(int(q) for q in self.q_set))
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if not 1 <= self.r_sparsity <= self.p:
            raise ConfigError(f"r_sparsity must lie in [1, p={self.p}], got {self.r_sparsity}")
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        K = horizon(self.n, self.T)
        if self.k_star is not None and not self.n < self.k_star <= K:
            raise ConfigError(f"k_star must lie in ({self.n}, {K}], got {self.k_star}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")

    @property
    def horizon(self) -> int:
        return horizon(self.n, self.T)

    @property
    def has_change(self) -> bool:
        return self.k_star is not None and self.delta > 0


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def gen_stream(spec: ScenarioSpec, rep_index: int) -> np.ndarray:
    """The ``floor(nT) x p`` stream of replication ``rep_index`` (row k-1 is X_k)."""
    K, p, rho = spec.horizon, spec.p, spec.rho
    E = _rep_rng(spec.seed, rep_index).standard_normal((K, p))
    if rho:
        a = math.sqrt(1.0 - rho * rho)
        Z = np.empty_like(E)
        Z[:, 0] = E[:, 0]
        for j in range(1, p):
            Z[:, j] = rho * Z[:, j - 1] + a * E[:, j]
    else:
        Z = E
    if spec.has_change:
        Z[spec.k_star - 1:, :spec.r_sparsity] += math.sqrt(spec.delta / spec.r_sparsity)
    return Z


def iter_observations(X):
    for i, row in enumerate(X, start=1):
        yield Observation(i, row)


@dataclass(frozen=True)
class Rule:
    """A decision rule read off shared trajectories."""

    name: str
    q_set: tuple
    boundary: str

    @classmethod
    def standard(cls, q_set=(2, 6), boundaries=BOUNDARIES) -> list:
        out = []
        for b in boundaries:
            for q in q_set:
                out.append(cls(f"L{q}", (q,), b))
            if len(q_set) > 1:
                out.append(cls("Comb", tuple(q_set), b))
        return out


@dataclass
class RuleReport:
    rule: str
    q_set: tuple
    boundary: str
    reps_used: int
    reject_rate: float
    adt: float
    n_detect_after_change: int
    n_alarm_before_change: int
    per_q: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    spec: dict
    excluded: int
    rules: list

    def rule(self, name: str, boundary: str) -> RuleReport:
        for r in self.rules:
            if r.rule == name and r.boundary == boundary:
                return r
        raise KeyError((name, boundary))

    def to_dict(self) -> dict:
        return {"spec": self.spec, "excluded": self.excluded, "rules": [asdict(r) for r in self.rules]}


def _one_rep(args):
    spec, rep, q_all, incomplete_N = args
    X = gen_stream(spec, rep)
    try:
        est = estimate_norms(X[:spec.n], q_all, N=incomplete_N, seed=spec.seed * 1_000_003 + rep)
    except PhaseIError:
        return None
    P = compute_paths(X, spec.n, q_all, est)
    return P.stats, P.argmax


def simulate_paths(spec: ScenarioSpec, q_all, incomplete_N=None, workers: int = 1):
    """Trajectories for every replication; ``None`` marks an excluded replication."""
    jobs = [(spec, r, tuple(q_all), incomplete_N) for r in range(spec.reps)]
    if workers <= 1:
        return [_one_rep(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_one_rep, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def evaluate_rules(spec: ScenarioSpec, results, rules, thresholds_for) -> ExperimentReport:
    """Apply each rule to precomputed trajectories.

    ``thresholds_for(rule)`` returns ``{q: c}`` on the statistic scale.
    """
    from .adaptive import Paths

    n, K = spec.n, spec.horizon
    ks = np.arange(n + 1, K + 1)
    used = [r for r in results if r is not None]
    excluded = len(results) - len(used)
    if excluded and excluded / len(results) >= MAX_EXCLUDED_FRACTION:
        raise ExperimentError(f"{excluded} of {len(results)} replications failed Phase-I estimation")
    reports = []
    for rule in rules:
        thr = thresholds_for(rule)
        alarms, delays, before = 0, [], 0
        per_q = {q: 0 for q in rule.q_set}
        for stats, arg in used:
            hit = first_alarm(Paths(n, ks, stats, arg), thr, rule.boundary)
            if hit is None:
                continue
            k, trig, _ = hit
            alarms += 1
            for q in trig:
                per_q[q] += 1
            if spec.has_change and k >= spec.k_star:
                delays.append(k - spec.k_star)
            elif spec.has_change:
                before += 1
        m = len(used)
        reports.append(RuleReport(
            rule=rule.name, q_set=rule.q_set, boundary=rule.boundary, reps_used=m,
            reject_rate=alarms / m if m else float("nan"),
            adt=float(np.mean(delays)) if delays else float("nan"),
            n_detect_after_change=len(delays), n_alarm_before_change=before,
            per_q={q: v / m for q, v in per_q.items()},
        ))
    return ExperimentReport(spec=asdict(spec), excluded=excluded, rules=reports)


def run_experiment(spec: ScenarioSpec, rules=None, *, grid: int | None = None, R: int = 100_000,
                   table_seed: int = 0, cache_dir=None, incomplete_N: int | None = None,
                   workers: int = 1) -> ExperimentReport:
    """Run ``spec.reps`` monitors and report rejection rate, ADT and per-q triggers.

    By default only the rule given by ``spec.q_set`` / ``spec.boundary`` is
    evaluated; pass ``Rule.standard()`` to get every column at once.
    """
    if rules is None:
        name = "Comb" if len(spec.q_set) > 1 else f"L{spec.q_set[0]}"
        rules = [Rule(name, spec.q_set, spec.boundary)]
    q_all = sorted({q for r in rules for q in r.q_set})
    g = spec.n if grid is None else grid
    cache = {}

    def thresholds_for(rule):
        key = (rule.q_set, rule.boundary)
        if key not in cache:
            cache[key] = critical_values(rule.q_set, spec.T, rule.boundary, spec.alpha, g, R,
                                         table_seed, cache_dir)
        return cache[key]

    for rule in rules:  # build tables before the replications
        thresholds_for(rule)
    results = simulate_paths(spec, q_all, incomplete_N, workers)
    return evaluate_rules(spec, results, rules, thresholds_for)


__all__ = [
    "ScenarioSpec", "Rule", "RuleReport", "ExperimentReport", "ExperimentError",
    "gen_stream", "iter_observations", "run_experiment", "simulate_paths", "evaluate_rules",
    "default_k_star", "adjusted_alpha",
]
