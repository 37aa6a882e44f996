"""Data model, monitor configuration and the shared CUSUM state.

Everything downstream works with 1-based time indices: ``X_1`` is the first
Phase-I row, ``X_n`` the last one, and monitoring runs over
``k = n + 1, ..., floor(n * T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

BOUNDARIES = ("T1", "T2", "T3")
MAX_Q = 8


class MonitorError(Exception):
    """Base class for errors raised by the monitoring library."""


class ConfigError(MonitorError, ValueError):
    """Invalid configuration (odd q, horizon too short, ...)."""


class DataError(MonitorError, ValueError):
    """Malformed observation: wrong dimension, non-finite values, bad index."""


def horizon(n: int, T) -> int:
    """Closed-end horizon ``floor(n * T)``, computed exactly for rational T."""
    return math.floor(Fraction(n) * Fraction(str(T)))


@dataclass(frozen=True)
class Observation:
    t: int
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise DataError(f"observation at t={self.t} must be a vector, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError(f"observation at t={self.t} has non-finite entries")
        if self.t < 1:
            raise DataError(f"time index must be >= 1, got {self.t}")
        object.__setattr__(self, "x", x)


@dataclass
class MonitorConfig:
    """Static configuration of a closed-end monitoring session.

    ``q_set`` holds even norms to combine (``{2, 6}`` by default), ``T`` is the
    horizon multiplier and ``alpha`` the global size of the combined test.
    """

    n: int
    p: int
    q_set: tuple = (2, 6)
    T: float = 2.0
    alpha: float = 0.1
    boundary: str = "T1"
    seed: int = 0

    def __post_init__(self):
        self.q_set = tuple(sorted({int(q) for q in self.q_set}))
        self.validate()

    def validate(self) -> None:
        if not self.q_set:
            raise ConfigError("q_set must not be empty")
        for q in self.q_set:
            if q < 2 or q % 2:
                raise ConfigError(f"q must be an even integer >= 2, got {q}")
            if q > MAX_Q:
                raise ConfigError(f"q is capped at {MAX_Q}, got {q}")
        if self.p < 1:
            raise ConfigError(f"dimension p must be >= 1, got {self.p}")
        if self.n < 8:
            raise ConfigError(f"Phase-I length n must be >= 8, got {self.n}")
        qmax = max(self.q_set)
        if self.n <= 2 * qmax:
            raise ConfigError(f"n={self.n} must exceed 2*max(q)={2 * qmax}")
        if not self.T > 1:
            raise ConfigError(f"T must be > 1, got {self.T}")
        if self.horizon <= self.n + qmax + 1:
            raise ConfigError(
                f"horizon floor(nT)={self.horizon} leaves no monitoring step for q={qmax}"
            )
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def horizon(self) -> int:
        return horizon(self.n, self.T)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "q_set": list(self.q_set),
            "T": self.T,
            "alpha": self.alpha,
            "boundary": self.boundary,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonitorConfig":
        return cls(
            n=int(d["n"]),
            p=int(d["p"]),
            q_set=tuple(d.get("q_set", (2, 6))),
            T=d.get("T", 2.0),
            alpha=float(d.get("alpha", 0.1)),
            boundary=d.get("boundary", "T1"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class CusumState:
    """Running sums ``B_t = sum_{i<=t} X_i`` and ``C_t = sum_{i<=t} X_i'X_i``.

    Storage is preallocated for the whole closed-end horizon; row ``t`` of
    ``B`` holds ``B_t`` and row 0 is the zero vector, so ``B[b] - B[a-1]`` is
    the block sum over ``[a, b]``.
    """

    p: int
    capacity: int
    B: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)
    t_now: int = field(init=False, default=0)

    def __post_init__(self):
        self.B = np.zeros((self.capacity + 1, self.p))
        self.C = np.zeros(self.capacity + 1)

    def push(self, obs: Observation) -> "CusumState":
        if obs.t != self.t_now + 1:
            raise DataError(f"expected t={self.t_now + 1}, got t={obs.t}")
        if obs.x.shape[0] != self.p:
            raise DataError(f"dimension mismatch: expected p={self.p}, got {obs.x.shape[0]}")
        if obs.t > self.capacity:
            raise DataError(f"t={obs.t} exceeds the closed-end horizon {self.capacity}")
        t = obs.t
        self.B[t] = self.B[t - 1] + obs.x
        self.C[t] = self.C[t - 1] + obs.x @ obs.x
        self.t_now = t
        return self

    def extend(self, X: np.ndarray) -> "CusumState":
        """Push the rows of ``X`` as consecutive observations."""
        for row in np.atleast_2d(X):
            self.push(Observation(self.t_now + 1, row))
        return self

    def pair_sum(self, a: int, b: int) -> float:
        """``S(a, b) = sum_{a <= i < j <= b} X_i'X_j`` from the two CUSUMs."""
        if not 1 <= a <= b <= self.t_now:
            raise IndexError(f"pair_sum({a}, {b}) outside stored range [1, {self.t_now}]")
        d = self.B[b] - self.B[a - 1]
        return 0.5 * (d @ d - (self.C[b] - self.C[a - 1]))


@dataclass
class OpCounter:
    """Counts length-p vector operations, used to check per-step complexity."""

    vector_ops: int = 0

    def add(self, n: int) -> None:
        self.vector_ops += int(n)

    def reset(self) -> None:
        self.vector_ops = 0


def as_matrix(X, p: int | None = None) -> np.ndarray:
    """Validate a 2-D block of observations (rows are time)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D array, got shape {X.shape}")
    if p is not None and X.shape[1] != p:
        raise DataError(f"dimension mismatch: expected p={p}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("data contains non-finite entries")
    return X
