"""Online decision layer: per-q monitors combined by union rejection.

Each q in ``q_set`` is tested at the adjusted level ``1 - (1 - alpha)^(1/|q_set|)``
and the combined monitor alarms at the first ``k`` where any active statistic
exceeds ``c(q) * w(k/n - 1)``. The statistic for q is active from
``k = n + q + 1``.

Critical values come from the limiting fields. For q >= 4 the statistic
``T_{n,q}`` converges to ``G_q``. The L2 statistic is built from ``G_k(m)``,
half the U-statistic, and converges to ``G / sqrt(2)``, so its threshold is
the ``G`` quantile times ``1/sqrt(2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import l2stat, limitlaw, lqstat
from .sigma_norm import NormEstimates, estimate_norms
from .streamcore import (
    ConfigError,
    CusumState,
    DataError,
    MonitorConfig,
    MonitorError,
    Observation,
    OpCounter,
    as_matrix,
)

L2_LIMIT_SCALE = 1.0 / math.sqrt(2.0)


class MonitorStateError(MonitorError, RuntimeError):
    """Operation not allowed in the monitor's current state."""


def adjusted_alpha(alpha: float, card_I: int) -> float:
    if card_I < 1:
        raise ValueError(f"need at least one test, got |I|={card_I}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return 1.0 - (1.0 - alpha) ** (1.0 / card_I)


def limit_scale(q: int) -> float:
    """Factor mapping the tabulated limit quantile to the statistic's scale."""
    return L2_LIMIT_SCALE if q == 2 else 1.0


def critical_values(q_set, T: float, boundary: str, alpha: float, g: int,
                    R: int = 100_000, seed: int = 0, cache_dir=None) -> dict:
    """``{q: threshold}`` on the statistic scale at the per-test level ``alpha*``.

    ``g`` is the grid resolution; matching it to ``n`` puts the limit grid on
    the lattice ``k/n`` actually scanned by the monitor.
    """
    a_star = adjusted_alpha(alpha, len(q_set))
    out = {}
    for q in q_set:
        tab = limitlaw.get_table(q, T, boundary, g, R, seed, cache_dir)
        out[q] = tab.c(a_star) * limit_scale(q)
    return out


@dataclass
class AlarmEvent:
    k_alarm: int
    triggered_q: tuple
    stats: dict
    thresholds: dict
    m_hat: int
    q_located: int
    argmax: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k_alarm": self.k_alarm,
            "triggered_q": list(self.triggered_q),
            "stats": {str(q): v for q, v in self.stats.items()},
            "thresholds": {str(q): v for q, v in self.thresholds.items()},
            "m_hat": self.m_hat,
            "q_located": self.q_located,
        }


@dataclass
class StepResult:
    k: int
    stats: dict
    argmax: dict
    thresholds: dict
    alarm: AlarmEvent | None = None


class _Engine:
    """Incremental statistics for a fixed q set (no decision logic)."""

    def __init__(self, n, p, capacity, q_set, est: NormEstimates, center, counter=None):
        self.n = n
        self.q_set = tuple(sorted(q_set))
        self.center = np.asarray(center, dtype=np.float64)
        self.counter = counter
        self.cusum = CusumState(p, capacity) if 2 in self.q_set else None
        qbig = [q for q in self.q_set if q > 2]
        self.tables = (lqstat.ProductSumTables(max(qbig), p, capacity, n=n, counter=counter)
                       if qbig else None)
        self.sigma_f = est.sigma_f
        self.lq = dict(est.lq)
        self.t = 0

    def push(self, x):
        y = x - self.center
        if self.cusum is not None:
            self.cusum.push(Observation(self.t + 1, y))
        if self.tables is not None:
            self.tables.push(y)
        self.t += 1

    def stats(self, k):
        """``{q: (T_{n,q}(k), argmax m)}`` for the q active at k."""
        out = {}
        for q in self.q_set:
            if k < self.n + q + 1:
                continue
            if q == 2:
                out[q] = l2stat.t2_stat(self.cusum, k, self.sigma_f, self.n, self.counter)
            else:
                out[q] = lqstat.tq_stat(self.tables, k, q, self.lq[q], self.n, self.counter)
        return out


class AdaptiveMonitor:
    """Closed-end combined L_q monitor.

    Typical use::

        mon = AdaptiveMonitor(cfg, thresholds)
        mon.fit(X_phase1)
        for k, x in enumerate(stream, start=cfg.n + 1):
            res = mon.step(Observation(k, x))
            if res.alarm: ...

    ``thresholds`` maps q to ``c_{alpha*}(q)`` on the statistic scale (see
    :func:`critical_values`); when omitted they are simulated or loaded from
    the cache on :meth:`fit` with a grid matched to ``n``.
    """

    def __init__(self, config: MonitorConfig, thresholds: dict | None = None, *,
                 grid: int | None = None, R: int = 100_000, table_seed: int = 0,
                 cache_dir=None, incomplete_N: int | None = None, counter: OpCounter | None = None):
        self.config = config
        self.thresholds = None if thresholds is None else {int(q): float(v) for q, v in thresholds.items()}
        if self.thresholds is not None:
            missing = set(config.q_set) - set(self.thresholds)
            if missing:
                raise ConfigError(f"no threshold for q in {sorted(missing)}")
        self.grid = config.n if grid is None else grid
        self.R = R
        self.table_seed = table_seed
        self.cache_dir = cache_dir
        self.incomplete_N = incomplete_N
        self.counter = counter
        self.estimates: NormEstimates | None = None
        self.alarm: AlarmEvent | None = None
        self._engine: _Engine | None = None
        self._last: dict = {}

    # -- Phase I ------------------------------------------------------------
    def fit(self, X, estimates: NormEstimates | None = None) -> "AdaptiveMonitor":
        cfg = self.config
        X = as_matrix(X, cfg.p)
        if X.shape[0] != cfg.n:
            raise DataError(f"Phase-I block must have n={cfg.n} rows, got {X.shape[0]}")
        if estimates is None:
            estimates = estimate_norms(X, cfg.q_set, N=self.incomplete_N, seed=cfg.seed)
        else:
            if estimates.n_train != cfg.n:
                raise DataError(f"estimates were fit on n={estimates.n_train}, config has n={cfg.n}")
        estimates.require_positive(cfg.q_set)
        self.estimates = estimates
        if self.thresholds is None:
            self.thresholds = critical_values(cfg.q_set, cfg.T, cfg.boundary, cfg.alpha,
                                              self.grid, self.R, self.table_seed, self.cache_dir)
        self._engine = _Engine(cfg.n, cfg.p, cfg.horizon, cfg.q_set, estimates,
                               X.mean(axis=0), self.counter)
        for row in X:
            self._engine.push(row)
        return self

    @property
    def sealed(self) -> bool:
        return self._engine is not None

    @property
    def t_now(self) -> int:
        return 0 if self._engine is None else self._engine.t

    # -- Phase II -----------------------------------------------------------
    def step(self, obs: Observation) -> StepResult:
        if self._engine is None:
            raise MonitorStateError("fit the Phase-I sample before stepping")
        if self.alarm is not None:
            raise MonitorStateError(f"monitor already alarmed at k={self.alarm.k_alarm}")
        cfg = self.config
        k = obs.t
        if k != self._engine.t + 1:
            raise DataError(f"expected t={self._engine.t + 1}, got t={k}")
        if k > cfg.horizon:
            raise MonitorStateError(f"t={k} is past the closed-end horizon {cfg.horizon}")
        if obs.x.shape[0] != cfg.p:
            raise DataError(f"dimension mismatch: expected p={cfg.p}, got {obs.x.shape[0]}")
        self._engine.push(obs.x)
        cur = self._engine.stats(k)
        self._last = cur
        w = limitlaw.boundary_w(cfg.boundary, k / cfg.n - 1.0)
        thr = {q: self.thresholds[q] * w for q in cur}
        stats = {q: v[0] for q, v in cur.items()}
        argmax = {q: v[1] for q, v in cur.items()}
        trig = tuple(q for q in sorted(cur) if stats[q] > thr[q])
        res = StepResult(k=k, stats=stats, argmax=argmax, thresholds=thr)
        if trig:
            q0 = trig[0]
            self.alarm = AlarmEvent(k_alarm=k, triggered_q=trig, stats=stats, thresholds=thr,
                                    m_hat=argmax[q0], q_located=q0, argmax=argmax)
            res.alarm = self.alarm
        return res

    def run(self, X2) -> AlarmEvent | None:
        """Step through the rows of ``X2`` until an alarm or the end of data."""
        for row in as_matrix(X2, self.config.p):
            res = self.step(Observation(self.t_now + 1, row))
            if res.alarm is not None:
                return res.alarm
        return None

    def locate_change(self, q: int | None = None) -> int:
        """Argmax m of statistic ``q`` (default: the triggering one) at the alarm time."""
        if self.alarm is None:
            raise MonitorStateError("locate_change needs an alarm")
        q = self.alarm.q_located if q is None else q
        if q not in self.alarm.argmax:
            raise ValueError(f"statistic for q={q} was not active at k={self.alarm.k_alarm}")
        return self.alarm.argmax[q]


# ---- batch trajectories -------------------------------------------------------

@dataclass
class Paths:
    """Per-k statistics for k = n+1..K; NaN / -1 where a q is not yet active."""

    n: int
    ks: np.ndarray
    stats: dict
    argmax: dict


def compute_paths(X, n: int, q_set, estimates: NormEstimates, K: int | None = None,
                  counter: OpCounter | None = None) -> Paths:
    """Statistic trajectories over a whole stream (rows of ``X``; first n are Phase I)."""
    X = as_matrix(X)
    K = X.shape[0] if K is None else K
    q_set = tuple(sorted(q_set))
    eng = _Engine(n, X.shape[1], K, q_set, estimates, X[:n].mean(axis=0), counter)
    ks = np.arange(n + 1, K + 1)
    stats = {q: np.full(ks.size, np.nan) for q in q_set}
    arg = {q: np.full(ks.size, -1, dtype=np.int64) for q in q_set}
    for row in X[:n]:
        eng.push(row)
    for j, k in enumerate(ks):
        eng.push(X[k - 1])
        for q, (t, m) in eng.stats(k).items():
            stats[q][j] = t
            arg[q][j] = m
    return Paths(n=n, ks=ks, stats=stats, argmax=arg)


def first_alarm(paths: Paths, thresholds: dict, boundary: str):
    """``(k_alarm, triggered_q, m_hat)`` of the union rule, or ``None``."""
    w = limitlaw.boundary_w(boundary, paths.ks / paths.n - 1.0)
    hit = None
    for q, c in thresholds.items():
        s = paths.stats[q]
        with np.errstate(invalid="ignore"):
            exceed = s > c * w
        idx = np.flatnonzero(exceed)
        if idx.size:
            hit = idx[0] if hit is None else min(hit, idx[0])
    if hit is None:
        return None
    with np.errstate(invalid="ignore"):
        trig = tuple(sorted(q for q, c in thresholds.items() if paths.stats[q][hit] > c * w[hit]))
    return int(paths.ks[hit]), trig, int(paths.argmax[trig[0]][hit])
