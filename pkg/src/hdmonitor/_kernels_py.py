"""Pure numpy kernels. Reference semantics for the compiled twin in ``_kernels.pyx``."""

import numpy as np

BACKEND = "numpy"


def l2_scan(B, C, k, m_lo, m_hi, out):
    """G_k(m) for m = m_lo..m_hi written to ``out`` (length m_hi - m_lo + 1).

    ``B`` and ``C`` are the CUSUM arrays with row 0 = 0.
    """
    m = np.arange(m_lo, m_hi + 1, dtype=np.float64)
    Bm = B[m_lo:m_hi + 1]
    E = B[k] - Bm
    bb = np.einsum("ij,ij->i", Bm, Bm)
    ee = np.einsum("ij,ij->i", E, E)
    cross = np.einsum("ij,ij->i", Bm, E)
    Cm = C[m_lo:m_hi + 1]
    s_pre = 0.5 * (bb - Cm)
    s_post = 0.5 * (ee - (C[k] - Cm))
    km = k - m
    out[:] = km * (km - 1.0) * s_pre + m * (m - 1.0) * s_post - (m - 1.0) * (km - 1.0) * cross
    return out


def extend_windows(M, x, lo, hi):
    """Append ``x`` to every window row ``lo <= j < hi`` of ``M[c, j, :]``.

    ``M[c]`` holds ordered-tuple product sums, hence the factor ``c``.
    """
    q = M.shape[0] - 1
    for c in range(q, 0, -1):
        M[c, lo:hi] += c * x * M[c - 1, lo:hi]


def lq_contract(Bsel, Msel, coef, out):
    """out[j] = sum_c coef[c, j] * sum_l Bsel[c, j, l] * Msel[q - c, j, l]."""
    S = np.einsum("cjl,cjl->cj", Bsel, Msel[::-1])
    out[:] = np.einsum("cj,cj->j", coef, S)
    return out


def tuple_kernels(X, idx, q):
    """(sum_l prod_k (X[i_k, l] - X[j_k, l]))**2 for each row of ``idx``.

    ``idx`` rows hold the q pre-indices followed by the q post-indices.
    """
    D = X[idx[:, :q]] - X[idx[:, q:]]
    h = D.prod(axis=1).sum(axis=1)
    return h * h
