"""Phase-I estimates of ``||Sigma||_F^2`` and ``||Sigma||_q^q``.

Both are U-statistics built from differences of Phase-I rows, so they do not
depend on the unknown mean.

* ``frob_sq_complete``: average over ``j1 < j2 < j3 < j4`` of
  ``[(X_j1 - X_j2)'(X_j3 - X_j4)]^2 / 4``, evaluated in O(n^2 p) from the Gram
  matrix.
* ``lq_norm_incomplete``: average over random ``i_1 < ... < i_q < j_1 < ... < j_q``
  of ``(sum_l prod_k (X_{i_k,l} - X_{j_k,l}))^2 / 2^q``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .streamcore import MonitorError, as_matrix

TUPLE_CHUNK = 4096
BRUTEFORCE_LIMIT = 10**6


class PhaseIError(MonitorError, ValueError):
    """The Phase-I sample cannot support the requested estimate."""


def _centered(X):
    X = as_matrix(X)
    return X - X.mean(axis=0)


def frob_sq_complete(X) -> float:
    """Complete 4-index estimator of ``||Sigma||_F^2`` in O(n^2 p)."""
    X = _centered(X)
    n = X.shape[0]
    if n < 4:
        raise PhaseIError(f"need n >= 4 Phase-I rows, got {n}")
    A = X @ X.T
    idx = np.arange(n, dtype=np.float64)
    row = idx[:, None]
    col = idx[None, :]
    up = np.triu(np.ones((n, n), dtype=bool), 1)
    Au = np.where(up, A, 0.0)
    A2 = Au * Au
    gap = col - row - 1.0  # indices strictly between row and col

    # squared terms
    sq = np.sum(A2 * (gap * (n - 1.0 - col)            # (a, c): b between, d after
                      + gap * (gap - 1.0) / 2.0         # (a, d): b < c between
                      + row * (n - 1.0 - col)           # (b, c): a before, d after
                      + row * gap))                     # (b, d): a before, c between

    # exclusive row suffix sums R[i, j] = sum_{d > j} A[i, d]
    R = np.cumsum(Au[:, ::-1], axis=1)[:, ::-1] - Au
    # exclusive column prefix sums L[i, j] = sum_{a < i} A[a, j]
    L = np.cumsum(Au, axis=0) - Au
    x1 = np.sum(Au * gap * R)
    s = Au.sum(axis=0)
    x2 = np.sum((n - 1.0 - idx) * (s * s - A2.sum(axis=0))) / 2.0
    x3 = np.sum(np.where(up, L * R, 0.0))
    W = np.cumsum(R, axis=0) - R
    x4 = np.sum(Au * W)
    x5 = np.sum(Au * gap * L)
    r = Au.sum(axis=1)
    x6 = np.sum(idx * (r * r - A2.sum(axis=1))) / 2.0

    total = sq + 2.0 * (-x1 - x2 + x3 + x4 - x5 - x6)
    return float(total / (4.0 * math.comb(n, 4)))


def frob_sq_bruteforce(X):
    """Quadruple loop over ``j1 < j2 < j3 < j4``; O(n^4 p). Accepts exact types."""
    rows = [list(r) for r in X]
    n = len(rows)
    if n < 4:
        raise PhaseIError(f"need n >= 4 Phase-I rows, got {n}")
    total = 0
    for a, b, c, d in itertools.combinations(range(n), 4):
        v = sum((xa - xb) * (xc - xd) for xa, xb, xc, xd in zip(rows[a], rows[b], rows[c], rows[d]))
        total += v * v
    return total / (4 * math.comb(n, 4))


def _check_q(q, n):
    if q < 2 or q % 2:
        raise ValueError(f"q must be an even integer >= 2, got {q}")
    if n < 2 * q:
        raise PhaseIError(f"need n >= 2q = {2 * q} Phase-I rows, got {n}")


def sample_tuples(n: int, q: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """``N`` uniform sorted 2q-subsets of ``{0, ..., n-1}``, one per row."""
    keys = rng.random((N, n))
    idx = np.argpartition(keys, 2 * q - 1, axis=1)[:, :2 * q]
    idx.sort(axis=1)
    return idx.astype(np.int_)


def lq_norm_incomplete(X, q: int, N: int | None = None, seed: int = 0) -> float:
    """Incomplete U-statistic estimate of ``||Sigma||_q^q`` from ``N`` random tuples."""
    X = _centered(X)
    n = X.shape[0]
    _check_q(q, n)
    N = 50 * n if N is None else int(N)
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    total = 0.0
    for ci, start in enumerate(range(0, N, TUPLE_CHUNK)):
        # one counter-based stream per chunk keeps results independent of chunking order
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(ci,))))
        idx = sample_tuples(n, q, min(TUPLE_CHUNK, N - start), rng)
        total += float(kernels.tuple_kernels(X, idx, q).sum())
    return total / (2.0 ** q * N)


def lq_norm_bruteforce(X, q: int) -> float:
    """Complete estimator by enumerating all ``C(n, 2q)`` index sets."""
    X = _centered(X)
    n = X.shape[0]
    _check_q(q, n)
    total_sets = math.comb(n, 2 * q)
    if total_sets > BRUTEFORCE_LIMIT:
        raise ValueError(f"C({n}, {2 * q}) = {total_sets} tuples is too many to enumerate")
    idx = np.array(list(itertools.combinations(range(n), 2 * q)), dtype=np.int_)
    total = 0.0
    for s in range(0, idx.shape[0], TUPLE_CHUNK):
        total += float(kernels.tuple_kernels(X, idx[s:s + TUPLE_CHUNK], q).sum())
    return total / (2.0 ** q * total_sets)


def lq_kernel_naive(d) -> float:
    """Per-tuple double sum ``sum_{l1,l2} prod_k d_k(l1) d_k(l2)``; O(q p^2)."""
    d = np.asarray(d, dtype=np.float64)
    q, p = d.shape
    total = 0.0
    for l1 in range(p):
        for l2 in range(p):
            prod = 1.0
            for k in range(q):
                prod *= d[k, l1] * d[k, l2]
            total += prod
    return total


def data_fingerprint(X) -> str:
    X = np.ascontiguousarray(as_matrix(X))
    h = hashlib.sha256()
    h.update(np.asarray(X.shape, dtype=np.int64).tobytes())
    h.update(X.tobytes())
    return h.hexdigest()


@dataclass
class NormEstimates:
    n_train: int
    frob_sq: float
    lq: dict = field(default_factory=dict)
    method: dict = field(default_factory=dict)
    fingerprint: str = ""

    @property
    def sigma_f(self) -> float:
        return math.sqrt(self.frob_sq)

    def require_positive(self, q_set) -> None:
        if not self.frob_sq > 0:
            raise PhaseIError(
                f"||Sigma||_F^2 estimate is {self.frob_sq:.4g} <= 0; enlarge the Phase-I sample"
            )
        for q in q_set:
            v = self.lq.get(q)
            if v is None:
                raise PhaseIError(f"no ||Sigma||_{q}^{q} estimate available")
            if not v > 0:
                raise PhaseIError(
                    f"||Sigma||_{q}^{q} estimate is {v:.4g} <= 0; enlarge n or the tuple count N"
                )

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "frob_sq": self.frob_sq,
            "lq": {str(q): v for q, v in self.lq.items()},
            "method": {str(q): m for q, m in self.method.items()},
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormEstimates":
        return cls(
            n_train=int(d["n_train"]),
            frob_sq=float(d["frob_sq"]),
            lq={int(q): float(v) for q, v in d.get("lq", {}).items()},
            method={int(q): m for q, m in d.get("method", {}).items()},
            fingerprint=d.get("fingerprint", ""),
        )


def estimate_norms(X, q_set=(2, 6), N: int | None = None, seed: int = 0,
                   complete_q2: bool = True, check: bool = True) -> NormEstimates:
    """All Phase-I norm estimates needed by a monitor over ``q_set``.

    ``q = 2`` uses the complete Gram-matrix estimator (unless ``complete_q2``
    is False); larger q use the incomplete estimator with ``N`` tuples
    (default ``50 n``).
    """
    X = as_matrix(X)
    n = X.shape[0]
    N = 50 * n if N is None else int(N)
    frob = frob_sq_complete(X)
    lq, method = {}, {}
    for q in sorted(set(q_set)):
        if q == 2 and complete_q2:
            lq[q] = frob
            method[q] = {"kind": "complete"}
        else:
            lq[q] = lq_norm_incomplete(X, q, N, seed)
            method[q] = {"kind": "incomplete", "N": N, "seed": seed}
    est = NormEstimates(n_train=n, frob_sq=frob, lq=lq, method=method,
                        fingerprint=data_fingerprint(X))
    if check:
        est.require_positive(q_set)
    return est
