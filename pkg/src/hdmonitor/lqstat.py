"""L_q-norm monitoring statistic for even q.

Notation: ``B(c, t, l)`` is the sum over ordered tuples of ``c`` distinct
indices in ``[1, t]`` of the product of coordinate ``l``; ``M(c, m, k, l)`` is
the same over the window ``[m, k]``. With these,

    S_{q,c}(m, k) = sum_l B(c, m, l) M(q-c, m+1, k, l)
    U_{n,q}(k, m) = sum_c (-1)^(q-c) C(q,c) P(m-c, q-c) P(k-m-q+c, c) S_{q,c}(m, k)

where ``P(a, b) = a! / (a-b)!``. ``U`` equals the U-statistic
``sum_l sum*_i sum*_j prod_t (X_{i_t,l} - X_{j_t,l})`` over distinct ordered
q-tuples before and after ``m``.

Window tables are kept for the current ``k`` only and are grown to the right
as observations arrive: ``M(c, m, k+1) = M(c, m, k) + c X_{k+1} M(c-1, m, k)``.
The factor ``c`` counts the slots the new index can occupy in an ordered tuple.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .streamcore import DataError, OpCounter, as_matrix


def falling(a: int, b: int) -> int:
    """Falling factorial ``a (a-1) ... (a-b+1)`` as an exact integer."""
    if a < 0 or b < 0:
        raise ValueError(f"falling factorial needs non-negative arguments, got P({a}, {b})")
    return math.perm(a, b) if b <= a else 0


def u_coefficients_exact(q: int, m: int, k: int) -> list[int]:
    return [
        (-1) ** (q - c) * math.comb(q, c) * falling(m - c, q - c) * falling(k - m - q + c, c)
        for c in range(q + 1)
    ]


@lru_cache(maxsize=4096)
def _coef_block(q: int, m_lo: int, m_hi: int, k: int) -> np.ndarray:
    out = np.empty((q + 1, m_hi - m_lo + 1))
    for j, m in enumerate(range(m_lo, m_hi + 1)):
        out[:, j] = [float(v) for v in u_coefficients_exact(q, m, k)]
    out.setflags(write=False)
    return out


@dataclass
class ProductSumTables:
    """Prefix tables ``B`` and current-k window tables ``M``.

    ``B[c, t]`` stores ``B(c, t, .)``. ``M[c, s]`` stores ``M(c, s, k, .)`` for
    the current ``k = t_now`` and window starts ``s >= win_lo``. Only windows
    starting after the Phase-I sample are needed, so ``win_lo`` defaults to
    ``n + 2`` when ``n`` is given.
    """

    q: int
    p: int
    capacity: int
    n: int | None = None
    win_lo: int | None = None
    counter: OpCounter | None = None
    t_now: int = field(init=False, default=0)

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.win_lo is None:
            self.win_lo = 2 if self.n is None else self.n + 2
        cap = self.capacity
        self.X = np.zeros((cap + 1, self.p))
        self.B = np.zeros((self.q + 1, cap + 1, self.p))
        self.B[0] = 1.0
        self.M = np.zeros((self.q + 1, cap + 2, self.p))
        self._cw = np.arange(1, self.q + 1, dtype=np.float64)[:, None]

    def push(self, x) -> "ProductSumTables":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.p,):
            raise DataError(f"dimension mismatch: expected p={self.p}, got shape {x.shape}")
        t = self.t_now + 1
        if t > self.capacity:
            raise DataError(f"t={t} exceeds table capacity {self.capacity}")
        self.X[t] = x
        # the new index can take any of the c slots of an ordered tuple
        self.B[1:, t] = self.B[1:, t - 1] + self._cw * x * self.B[:-1, t - 1]
        lo = self.win_lo
        if t >= lo:
            if t > lo:
                kernels.extend_windows(self.M, x, lo, t)
            self.M[0, t] = 1.0
            self.M[1, t] = x
            self.M[2:, t] = 0.0
        if self.counter is not None:
            self.counter.add(self.q * (1 + max(t - lo, 0)))
        self.t_now = t
        return self

    def extend(self, X) -> "ProductSumTables":
        for row in as_matrix(X, self.p):
            self.push(row)
        return self

    def window(self, c: int, m: int, k: int) -> np.ndarray:
        """``M(c, m, k, .)``; from storage when possible, else by a leftward sweep."""
        if not 0 <= c <= self.q:
            raise ValueError(f"c={c} outside [0, {self.q}]")
        if k > self.t_now or m < 1:
            raise ValueError(f"window [{m}, {k}] outside the stored stream [1, {self.t_now}]")
        if m > k:
            return np.ones(self.p) if c == 0 else np.zeros(self.p)
        if k == self.t_now and m >= self.win_lo:
            return self.M[c, m].copy()
        return build_M(self.X[1:k + 1], c, k, [m])[c, 0]


def extend_B(tables: ProductSumTables, x_new) -> ProductSumTables:
    return tables.push(x_new)


def build_M(X, c_max: int, k: int, m_range) -> np.ndarray:
    """Window tables ``M(c, m, k, l)`` by sweeping ``m`` from ``k`` leftward.

    ``X[i-1]`` is observation ``i``. Returns an array of shape
    ``(c_max + 1, len(m_range), p)`` aligned with ``m_range``.
    Recursion: ``M(c, m) = M(c, m+1) + c X_m M(c-1, m+1)``.
    """
    X = np.asarray(X, dtype=np.float64)
    m_range = list(m_range)
    if not m_range:
        return np.zeros((c_max + 1, 0, X.shape[1]))
    m_min = min(m_range)
    if m_min < 1 or max(m_range) > k + 1 or k > X.shape[0]:
        raise ValueError(f"m_range must lie in [1, {k + 1}] with k <= {X.shape[0]}")
    p = X.shape[1]
    cur = np.zeros((c_max + 1, p))
    cur[0] = 1.0
    cw = np.arange(1, c_max + 1, dtype=np.float64)[:, None]
    want = {m: j for j, m in enumerate(m_range)}
    out = np.zeros((c_max + 1, len(m_range), p))
    if k + 1 in want:
        out[:, want[k + 1]] = cur
    for m in range(k, m_min - 1, -1):
        x = X[m - 1]
        cur[1:] = cur[1:] + cw * x * cur[:-1]
        if m in want:
            out[:, want[m]] = cur
    return out


def s_stat(tables: ProductSumTables, q: int, c: int, m: int, k: int) -> float:
    """``S_{q,c}(m, k) = sum_l B(c, m, l) M(q-c, m+1, k, l)``."""
    if not 0 <= c <= q <= tables.q:
        raise ValueError(f"need 0 <= c <= q <= {tables.q}, got c={c}, q={q}")
    if not 1 <= m < k <= tables.t_now:
        raise ValueError(f"need 1 <= m < k <= {tables.t_now}, got m={m}, k={k}")
    if tables.n is not None and not tables.n + 1 <= m <= k - q:
        raise ValueError(f"m={m} outside the trimmed range [{tables.n + 1}, {k - q}]")
    return float(tables.B[c, m] @ tables.window(q - c, m + 1, k))


def u_stat(tables: ProductSumTables, q: int, m: int, k: int) -> float:
    coefs = u_coefficients_exact(q, m, k)
    return float(sum(float(a) * s_stat(tables, q, c, m, k) for c, a in enumerate(coefs)))


def u_scan(tables: ProductSumTables, q: int, k: int, n: int | None = None,
           counter: OpCounter | None = None) -> np.ndarray:
    """U_{n,q}(k, m) for all ``m = n+1, ..., k-q`` at the current ``k``."""
    n = tables.n if n is None else n
    if n is None:
        raise ValueError("Phase-I length n is required")
    if q > tables.q or q % 2:
        raise ValueError(f"q must be even and <= {tables.q}, got {q}")
    if k < n + q + 1:
        raise ValueError(f"k={k} < n+q+1={n + q + 1}: no admissible change point")
    if k != tables.t_now:
        raise ValueError(f"scans run at the current time {tables.t_now}, got k={k}")
    if tables.win_lo > n + 2:
        raise ValueError("window tables do not cover the trimmed range")
    m_lo, m_hi = n + 1, k - q
    coef = _coef_block(q, m_lo, m_hi, k)
    Bsel = tables.B[:q + 1, m_lo:m_hi + 1]
    Msel = tables.M[:q + 1, m_lo + 1:m_hi + 2]
    out = np.empty(m_hi - m_lo + 1)
    kernels.lq_contract(Bsel, Msel, coef, out)
    if counter is not None:
        counter.add((q + 1) * out.size)
    return out


def tq_stat(tables: ProductSumTables, k: int, q: int, sigma_q_hat: float,
            n: int | None = None, counter: OpCounter | None = None) -> tuple[float, int]:
    """``(T_{n,q}(k), argmax m)`` with smallest-m tie-break.

    ``sigma_q_hat`` estimates ``||Sigma||_q^q``.
    """
    if not sigma_q_hat > 0:
        raise ValueError(f"norm estimate must be positive, got {sigma_q_hat}")
    n = tables.n if n is None else n
    u = u_scan(tables, q, k, n, counter)
    j = int(np.argmax(u))
    return float(u[j]) / lq_scale(n, q, sigma_q_hat), n + 1 + j


def lq_scale(n: int, q: int, sigma_q_hat: float) -> float:
    """``sqrt(n^{3q} sigma_q_hat)``."""
    return float(n) ** (1.5 * q) * math.sqrt(sigma_q_hat)


@dataclass
class LqScan:
    k: int
    q: int
    m_values: np.ndarray
    u_values: np.ndarray
    t_stat: float
    argmax_m: int


def scan_lq(tables: ProductSumTables, k: int, q: int, sigma_q_hat: float) -> LqScan:
    u = u_scan(tables, q, k)
    if not sigma_q_hat > 0:
        raise ValueError(f"norm estimate must be positive, got {sigma_q_hat}")
    n = tables.n
    j = int(np.argmax(u))
    return LqScan(k=k, q=q, m_values=np.arange(n + 1, k - q + 1), u_values=u,
                  t_stat=float(u[j]) / lq_scale(n, q, sigma_q_hat), argmax_m=n + 1 + j)


# ---- brute-force oracles -------------------------------------------------

def tuple_sum(values, c: int):
    """Sum over ordered tuples of ``c`` distinct positions of the product."""
    vals = list(values)
    total = 0
    for idx in itertools.permutations(range(len(vals)), c):
        prod = 1
        for i in idx:
            prod *= vals[i]
        total += prod
    return total


def s_stat_bruteforce(X, q: int, c: int, m: int, k: int) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(sum(tuple_sum(X[:m, l], c) * tuple_sum(X[m:k, l], q - c)
                     for l in range(X.shape[1])))


def u_stat_bruteforce(X, q: int, m: int, k: int, chunk: int = 128) -> float:
    """Direct U-statistic over distinct ordered q-tuples before and after m."""
    X = np.asarray(X, dtype=np.float64)
    I = np.array(list(itertools.permutations(range(m), q)), dtype=np.intp).reshape(-1, q)
    J = np.array(list(itertools.permutations(range(m, k), q)), dtype=np.intp).reshape(-1, q)
    if I.size == 0 or J.size == 0:
        return 0.0
    total = 0.0
    for l in range(X.shape[1]):
        a = X[I, l]
        b = X[J, l]
        for s in range(0, a.shape[0], chunk):
            d = a[s:s + chunk, None, :] - b[None, :, :]
            total += d.prod(axis=2).sum()
    return float(total)
