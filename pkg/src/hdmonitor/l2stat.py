"""L2-norm monitoring statistic.

For a candidate change point ``m`` inside the monitoring window ``(n, k]``::

    G_k(m) = (k-m)(k-m-1) S(1, m) + m(m-1) S(m+1, k) - (m-1)(k-m-1) B_m'(B_k - B_m)

with ``S(a, b)`` the sum of ``X_i'X_j`` over pairs ``a <= i < j <= b``. The
normalized statistic is ``T_{n,2}(k) = max_m G_k(m) / (n^3 sigma_F)`` over
``m = n+1, ..., k-2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .streamcore import CusumState, OpCounter


@dataclass
class L2Scan:
    k: int
    m_values: np.ndarray
    g_values: np.ndarray
    t_stat: float
    argmax_m: int

    def as_dict(self) -> dict:
        return {int(m): float(g) for m, g in zip(self.m_values, self.g_values)}


def _check_m(m, k, n):
    if not n + 1 <= m <= k - 2:
        raise ValueError(f"m={m} outside the trimmed range [{n + 1}, {k - 2}] for k={k}")


def g_stat(state: CusumState, m: int, k: int, n: int) -> float:
    """G_k(m) from the CUSUM arrays in O(p)."""
    _check_m(m, k, n)
    if k > state.t_now:
        raise ValueError(f"k={k} is ahead of the stream (t={state.t_now})")
    out = np.empty(1)
    kernels.l2_scan(state.B, state.C, k, m, m, out)
    return float(out[0])


def g_scan(state: CusumState, k: int, n: int, counter: OpCounter | None = None) -> np.ndarray:
    """G_k(m) for all ``m = n+1, ..., k-2`` (one O(k p) pass)."""
    if k < n + 3:
        raise ValueError(f"k={k} < n+3: no admissible change point")
    if k > state.t_now:
        raise ValueError(f"k={k} is ahead of the stream (t={state.t_now})")
    out = np.empty(k - 2 - n)
    kernels.l2_scan(state.B, state.C, k, n + 1, k - 2, out)
    if counter is not None:
        counter.add(3 * out.size)
    return out


def t2_stat(state: CusumState, k: int, sigma_f_hat: float, n: int,
            counter: OpCounter | None = None) -> tuple[float, int]:
    """``(T_{n,2}(k), argmax m)``; ties go to the smallest m."""
    if not sigma_f_hat > 0:
        raise ValueError(f"sigma_f_hat must be positive, got {sigma_f_hat}")
    g = g_scan(state, k, n, counter)
    j = int(np.argmax(g))
    return float(g[j]) / (float(n) ** 3 * sigma_f_hat), n + 1 + j


def scan_l2(state: CusumState, k: int, sigma_f_hat: float, n: int) -> L2Scan:
    g = g_scan(state, k, n)
    if not sigma_f_hat > 0:
        raise ValueError(f"sigma_f_hat must be positive, got {sigma_f_hat}")
    j = int(np.argmax(g))
    return L2Scan(k=k, m_values=np.arange(n + 1, k - 1), g_values=g,
                  t_stat=float(g[j]) / (float(n) ** 3 * sigma_f_hat), argmax_m=n + 1 + j)


def g_stat_bruteforce(X, m: int, k: int, n: int | None = None):
    """Naive evaluation of G_k(m) from raw rows, O(k^2 p).

    Works on any numeric element type; pass nested lists of ``Fraction`` for
    exact arithmetic. ``X[i-1]`` is observation ``i``.
    """
    lo = 1 if n is None else n + 1
    if not lo <= m <= k - 2:
        raise ValueError(f"m={m} outside the trimmed range [{lo}, {k - 2}] for k={k}")
    rows = [list(X[i]) for i in range(k)]

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    pre = sum(dot(rows[i], rows[j]) for i in range(m) for j in range(i + 1, m))
    post = sum(dot(rows[i], rows[j]) for i in range(m, k) for j in range(i + 1, k))
    cross = sum(dot(rows[i], rows[j]) for i in range(m) for j in range(m, k))
    return (k - m) * (k - m - 1) * pre + m * (m - 1) * post - (m - 1) * (k - m - 1) * cross


def g_scan_direct(X, k: int, n: int) -> np.ndarray:
    """All G_k(m) recomputed from raw rows, no state carried between calls.

    Pairwise inner products are formed afresh and every block sum is taken
    separately for each m, so one call costs O(k^2 p + k^3). This is the
    re-computation path the recursive scan replaces.
    """
    if k < n + 3:
        raise ValueError(f"k={k} < n+3: no admissible change point")
    Y = np.asarray(X, dtype=np.float64)[:k]
    U = np.triu(Y @ Y.T, 1)
    out = np.empty(k - 2 - n)
    for j, m in enumerate(range(n + 1, k - 1)):
        pre = U[:m, :m].sum()
        post = U[m:, m:].sum()
        cross = U[:m, m:].sum()
        out[j] = (k - m) * (k - m - 1) * pre + m * (m - 1) * post - (m - 1) * (k - m - 1) * cross
    return out


def t2_stat_direct(X, k: int, sigma_f_hat: float, n: int) -> tuple[float, int]:
    g = g_scan_direct(X, k, n)
    j = int(np.argmax(g))
    return float(g[j]) / (float(n) ** 3 * sigma_f_hat), n + 1 + j
