"""Boundary functions and Monte-Carlo critical values of the limiting processes.

Under the null, the normalized statistics converge to suprema of centered
Gaussian fields on ``1 <= s <= t <= T``:

* ``G(s, t) = t(t-s) Q(0,s) + s t Q(s,t) - s(t-s) Q(0,t)`` with
  ``Cov(Q(a1,b1), Q(a2,b2)) = (min(b1,b2) - max(a1,a2))_+^2``;
* ``G_q(s, t) = sum_c (-1)^(q-c) C(q,c) s^(q-c) (t-s)^c Q_{q,c}(s; [0,t])``.

``Q_{q,c}(s; [0,t])`` is the limit of an ordered-tuple sum with ``c`` indices in
``[0, s]`` and ``q - c`` in ``(s, t]``. Counting shared index sets gives, for
``s1 <= s2`` and ``b = min(t1, t2)``::

    Cov = C(c2,c1) c1! (q-c1)! s1^c1 (R-s1)^(c2-c1) (b-R)^(q-c2),  R = min(s2, b)

when ``c1 <= c2`` (and ``c1 == c2`` if ``s1 == s2``), and 0 otherwise. At
``q = 2`` this is exactly ``Cov(G_2) = 2 Cov(G)``.

The grid sup is taken over pairs with ``s < t`` together with 0, because
``G(t, t) = 0`` identically.
"""

from __future__ import annotations

import base64
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .streamcore import BOUNDARIES, ConfigError, MonitorError

CHUNK = 1000
ALPHAS = (0.10, 0.05, 0.025, 0.01)
JITTERS = (0.0, 1e-12, 1e-11, 1e-10)
EIG_TOL = 1e-10


class FactorizationError(MonitorError, RuntimeError):
    """Covariance is not PSD within the jitter budget."""


class CacheError(MonitorError, RuntimeError):
    """Corrupt or mismatched critical-value cache file."""


class CacheKeyError(CacheError, KeyError):
    pass


def boundary_w(kind: str, t):
    """Boundary function ``w(t)`` for ``t >= 0``; vectorized over ``t``."""
    if kind not in BOUNDARIES:
        raise ConfigError(f"unknown boundary {kind!r}")
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt < 0):
        raise ValueError("boundary functions are defined for t >= 0")
    if kind == "T1":
        out = np.ones_like(tt)
    elif kind == "T2":
        out = (tt + 1.0) ** 2
    else:
        out = (tt + 1.0) ** 2 * np.maximum(np.sqrt(tt / (tt + 1.0)), 1e-10)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GridSpec:
    """Lattice ``{1, 1 + 1/g, ..., T}`` used for both ``s`` and ``t``."""

    T: float = 2.0
    g: int = 32

    def __post_init__(self):
        if not self.T > 1:
            raise ConfigError(f"T must exceed 1, got {self.T}")
        if self.g < 1:
            raise ConfigError(f"g must be >= 1, got {self.g}")

    @property
    def points(self) -> np.ndarray:
        j = np.arange(self.g, math.floor(self.g * self.T + 1e-9) + 1)
        pts = j / self.g
        if not math.isclose(pts[-1], self.T):
            pts = np.append(pts, self.T)
        return pts

    @property
    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """``(s, t)`` arrays over all grid pairs with ``s < t``."""
        pts = self.points
        i, j = np.triu_indices(pts.size, 1)
        return pts[i], pts[j]


# ---- Q covariances ---------------------------------------------------------

def q2_cov(a1, b1, a2, b2):
    """``Cov(Q(a1,b1), Q(a2,b2))`` for the q = 2 field."""
    d = np.minimum(b1, b2) - np.maximum(a1, a2)
    return np.maximum(d, 0.0) ** 2


def qc_cov(q: int, c1: int, s1, t1, c2: int, s2, t2):
    """``Cov(Q_{q,c1}(s1; [0,t1]), Q_{q,c2}(s2; [0,t2]))``, broadcasting over arrays."""
    s1, t1, s2, t2 = (np.asarray(v, dtype=np.float64) for v in (s1, t1, s2, t2))
    if c1 > c2:
        return qc_cov(q, c2, s2, t2, c1, s1, t1)
    lo = np.minimum(s1, s2)
    b = np.minimum(t1, t2)
    R = np.minimum(np.maximum(s1, s2), b)
    val = (math.comb(c2, c1) * math.factorial(c1) * math.factorial(q - c1)
           * lo ** c1 * (R - lo) ** (c2 - c1) * (b - R) ** (q - c2))
    # c1 indices before s1 and the remaining c2 - c1 of tuple 2's pre-block must
    # sit in (s1, s2]; this needs s1 < s2 unless the counts match
    ok = (s1 < s2) if c1 < c2 else np.ones(np.broadcast(s1, s2).shape, dtype=bool)
    return np.where(ok, val, 0.0)


def g_coefficients(q: int, s, t) -> np.ndarray:
    """``a_c(s,t) = (-1)^(q-c) C(q,c) s^(q-c) (t-s)^c``, shape ``(q+1, len(s))``."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.stack([(-1) ** (q - c) * math.comb(q, c) * s ** (q - c) * (t - s) ** c
                     for c in range(q + 1)])


def g2_covariance(s, t, row_chunk: int = 512) -> np.ndarray:
    """Covariance of ``G(s_i, t_i)`` (q = 2 field) over the given pairs."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    N = s.size
    zero = np.zeros(N)
    terms = [(t * (t - s), zero, s), (s * t, s, t), (-s * (t - s), zero, t)]
    out = np.zeros((N, N))
    for r0 in range(0, N, row_chunk):
        r = slice(r0, min(r0 + row_chunk, N))
        blk = out[r]
        for w1, a1, b1 in terms:
            for w2, a2, b2 in terms:
                blk += (w1[r, None] * w2[None, :]) * q2_cov(a1[r, None], b1[r, None], a2[None, :], b2[None, :])
    return out


def gq_covariance(q: int, s, t, row_chunk: int = 256) -> np.ndarray:
    """Covariance of ``G_q(s_i, t_i)`` over the given pairs."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    N = s.size
    A = g_coefficients(q, s, t)
    out = np.zeros((N, N))
    for r0 in range(0, N, row_chunk):
        r = slice(r0, min(r0 + row_chunk, N))
        blk = out[r]
        S1, T1 = s[r, None], t[r, None]
        for c1 in range(q + 1):
            for c2 in range(q + 1):
                blk += (A[c1, r, None] * A[c2, None, :]) * qc_cov(q, c1, S1, T1, c2, s[None, :], t[None, :])
    return out


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor ``L`` with ``L L' ~= cov``.

    Tries Cholesky with relative diagonal jitter 0, 1e-12, 1e-11, 1e-10. Smooth
    fields are numerically rank deficient, so if Cholesky fails an eigenvalue
    factorization is used, provided no eigenvalue is below ``-1e-10`` times
    the largest one.
    """
    cov = 0.5 * (cov + cov.T)
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        raise FactorizationError("covariance has a nonpositive mean diagonal")
    eye = np.eye(cov.shape[0])
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(cov + jit * scale * eye)
        except np.linalg.LinAlgError:
            continue
    w, V = np.linalg.eigh(cov)
    top = w[-1]
    if w[0] < -EIG_TOL * top:
        raise FactorizationError(
            f"covariance not PSD: smallest eigenvalue {w[0]:.3g} vs largest {top:.3g}"
        )
    keep = w > EIG_TOL * top
    return V[:, keep] * np.sqrt(w[keep])


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def sample_gaussian(L: np.ndarray, R: int, seed: int):
    """Yield ``(offset, draws)`` blocks of ``R`` draws of ``N(0, L L')``.

    Each block of ``CHUNK`` rows has its own counter-based stream, so output
    does not depend on how blocks are consumed.
    """
    for ci, start in enumerate(range(0, R, CHUNK)):
        m = min(CHUNK, R - start)
        Z = _chunk_rng(seed, ci).standard_normal((m, L.shape[1]))
        yield start, Z @ L.T


def _sup_samples(cov: np.ndarray, t: np.ndarray, R: int, seed: int, boundaries=BOUNDARIES) -> dict:
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    L = psd_factor(cov)
    inv_w = {b: 1.0 / boundary_w(b, t - 1.0) for b in boundaries}
    out = {b: np.empty(R) for b in boundaries}
    for start, Y in sample_gaussian(L, R, seed):
        for b in boundaries:
            out[b][start:start + Y.shape[0]] = np.maximum((Y * inv_w[b]).max(axis=1), 0.0)
    return out


def simulate_sup_all(q: int, grid: GridSpec, R: int, seed: int, boundaries=BOUNDARIES) -> dict:
    """Sup samples for every boundary from one set of field draws.

    ``q = 2`` uses the ``G`` field, larger even ``q`` the ``G_q`` field.
    """
    if q % 2 or not 2 <= q <= 8:
        raise ConfigError(f"q must be even in [2, 8], got {q}")
    s, t = grid.pairs
    cov = g2_covariance(s, t) if q == 2 else gq_covariance(q, s, t)
    return _sup_samples(cov, t, R, seed, boundaries)


def simulate_sup_q2(grid: GridSpec, boundary: str, R: int, seed: int) -> np.ndarray:
    return simulate_sup_all(2, grid, R, seed, (boundary,))[boundary]


def simulate_sup_qc(q: int, grid: GridSpec, boundary: str, R: int, seed: int) -> np.ndarray:
    """Sup of ``G_q / w`` built from the ``Q_{q,c}`` covariance (any even q, including 2)."""
    if q % 2 or not 2 <= q <= 8:
        raise ConfigError(f"q must be even in [2, 8], got {q}")
    s, t = grid.pairs
    return _sup_samples(gq_covariance(q, s, t), t, R, seed, (boundary,))[boundary]


def sample_q2_field(intervals, R: int, seed: int) -> np.ndarray:
    """Joint draws of ``Q(a, b)`` at the given intervals, shape ``(R, len(intervals))``."""
    a, b = (np.asarray(v, dtype=np.float64) for v in zip(*intervals))
    cov = q2_cov(a[:, None], b[:, None], a[None, :], b[None, :])
    return _draw(cov, R, seed)


def sample_qc_field(q: int, points, R: int, seed: int) -> np.ndarray:
    """Joint draws of ``Q_{q,c}(s; [0,t])`` for ``points = [(c, s, t), ...]``."""
    n = len(points)
    cov = np.empty((n, n))
    for i, (c1, s1, t1) in enumerate(points):
        for j, (c2, s2, t2) in enumerate(points):
            cov[i, j] = qc_cov(q, c1, s1, t1, c2, s2, t2)
    return _draw(cov, R, seed)


def _draw(cov, R, seed):
    L = psd_factor(cov)
    return np.vstack([Y for _, Y in sample_gaussian(L, R, seed)])


def critical_value(sample, alpha: float) -> float:
    """Empirical ``1 - alpha`` quantile (type 7)."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    sample = np.asarray(sample, dtype=np.float64)
    R = sample.size
    if R * min(alpha, 1 - alpha) < 50:
        raise ValueError(f"R={R} draws are too few for alpha={alpha}: need R*min(alpha,1-alpha) >= 50")
    return float(np.quantile(sample, 1.0 - alpha, method="linear"))


# ---- critical value tables -------------------------------------------------

def _version() -> str:
    from . import __version__
    return __version__


@dataclass
class CriticalValueTable:
    key: dict
    quantiles: dict
    metadata: dict = field(default_factory=dict)
    sample: np.ndarray | None = None

    def c(self, alpha: float) -> float:
        for a, v in self.quantiles.items():
            if math.isclose(a, alpha, rel_tol=0, abs_tol=1e-12):
                return v
        if self.sample is None:
            raise KeyError(f"alpha={alpha} not tabulated and no raw sample stored")
        return critical_value(self.sample, alpha)

    def to_json(self) -> dict:
        d = {
            "key": self.key,
            "quantiles": {repr(float(a)): v for a, v in self.quantiles.items()},
            "metadata": self.metadata,
        }
        if self.sample is not None:
            d["sample_f64_b64"] = base64.b64encode(
                np.ascontiguousarray(self.sample, dtype="<f8").tobytes()).decode("ascii")
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CriticalValueTable":
        sample = None
        if "sample_f64_b64" in d:
            sample = np.frombuffer(base64.b64decode(d["sample_f64_b64"]), dtype="<f8").copy()
        return cls(key=d["key"], quantiles={float(a): float(v) for a, v in d["quantiles"].items()},
                   metadata=d.get("metadata", {}), sample=sample)


def table_key(q: int, T: float, boundary: str, g: int, R: int, seed: int) -> dict:
    return {"q": int(q), "T": float(T), "boundary": boundary, "g": int(g), "R": int(R), "seed": int(seed)}


def make_table(key: dict, sample: np.ndarray, alphas=ALPHAS) -> CriticalValueTable:
    if key["R"] < 1000:
        raise ValueError("tables need R >= 1000 replications")
    return CriticalValueTable(
        key=key,
        # only levels the sample size supports are tabulated
        quantiles={a: critical_value(sample, a) for a in alphas
                   if len(sample) * min(a, 1 - a) >= 50},
        metadata={"created": time.strftime("%Y-%m-%dT%H:%M:%S"), "version": _version()},
        sample=np.asarray(sample, dtype=np.float64),
    )


def save_table(path, table: CriticalValueTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(table.to_json()))
    os.replace(tmp, path)


def load_table(path, key: dict | None = None) -> CriticalValueTable:
    try:
        table = CriticalValueTable.from_json(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CacheError(f"cannot read critical-value table {path}: {e}") from e
    if key is not None and table.key != key:
        raise CacheKeyError(f"cached table key {table.key} does not match requested {key}")
    ver = table.metadata.get("version")
    if ver != _version():
        warnings.warn(f"critical-value table {path} was built by version {ver}, running {_version()}")
    return table


def table_path(cache_dir, key: dict) -> Path:
    name = "cv_q{q}_T{T}_{boundary}_g{g}_R{R}_s{seed}.json".format(**key)
    return Path(cache_dir) / name


def default_cache_dir() -> Path:
    return Path(os.environ.get("HDMONITOR_CACHE", Path.home() / ".cache" / "hdmonitor"))


def get_table(q: int, T: float, boundary: str, g: int, R: int = 100_000, seed: int = 0,
              cache_dir=None) -> CriticalValueTable:
    """Load a cached table or simulate it (all boundaries at once) and cache it."""
    cache_dir = default_cache_dir() if cache_dir is None else Path(cache_dir)
    key = table_key(q, T, boundary, g, R, seed)
    path = table_path(cache_dir, key)
    if path.exists():
        return load_table(path, key)
    samples = simulate_sup_all(q, GridSpec(T=T, g=g), R, seed)
    out = None
    for b, smp in samples.items():
        k = table_key(q, T, b, g, R, seed)
        tab = make_table(k, smp)
        save_table(table_path(cache_dir, k), tab)
        if b == boundary:
            out = tab
    return out


# ---- finite-sample validation engine ----------------------------------------

def finite_sample_sup(q: int, n: int = 100, p: int = 200, T: float = 2.0, boundary: str = "T1",
                      R: int = 200, seed: int = 0) -> np.ndarray:
    """Sup of ``T_{n,q}(k) / w(k/n - 1)`` on i.i.d. N(0, I_p) streams with true norms.

    Uses the U-statistic form for every q, so the target is the ``G_q`` limit
    (for q = 2 that is ``sqrt(2)`` times the ``G`` field).
    """
    from .lqstat import ProductSumTables, lq_scale, u_scan
    from .streamcore import horizon

    K = horizon(n, T)
    scale = lq_scale(n, q, float(p))
    ks = np.arange(n + q + 1, K + 1)
    inv_w = 1.0 / boundary_w(boundary, ks / n - 1.0)
    out = np.empty(R)
    for r in range(R):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(r,))))
        X = rng.standard_normal((K, p))
        tab = ProductSumTables(q, p, K, n=n).extend(X[:n + q])
        best = 0.0
        for j, k in enumerate(ks):
            tab.push(X[k - 1])
            best = max(best, float(u_scan(tab, q, k).max()) / scale * inv_w[j])
        out[r] = best
    return out
