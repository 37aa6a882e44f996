# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same contracts as ``_kernels_py``."""

import numpy as np

BACKEND = "cython"


def l2_scan(const double[:, ::1] B, const double[::1] C, Py_ssize_t k,
            Py_ssize_t m_lo, Py_ssize_t m_hi, double[::1] out):
    cdef Py_ssize_t p = B.shape[1]
    cdef Py_ssize_t m, l
    cdef double bb, ee, cross, e, b, s_pre, s_post, km, fm
    for m in range(m_lo, m_hi + 1):
        bb = 0.0
        ee = 0.0
        cross = 0.0
        for l in range(p):
            b = B[m, l]
            e = B[k, l] - b
            bb += b * b
            ee += e * e
            cross += b * e
        s_pre = 0.5 * (bb - C[m])
        s_post = 0.5 * (ee - (C[k] - C[m]))
        km = <double>(k - m)
        fm = <double>m
        out[m - m_lo] = (km * (km - 1.0) * s_pre + fm * (fm - 1.0) * s_post
                         - (fm - 1.0) * (km - 1.0) * cross)
    return np.asarray(out)


def extend_windows(double[:, :, ::1] M, const double[::1] x, Py_ssize_t lo, Py_ssize_t hi):
    cdef Py_ssize_t q = M.shape[0] - 1
    cdef Py_ssize_t p = M.shape[2]
    cdef Py_ssize_t c, j, l
    for j in range(lo, hi):
        for c in range(q, 0, -1):
            for l in range(p):
                M[c, j, l] += c * x[l] * M[c - 1, j, l]


def lq_contract(const double[:, :, :] Bsel, const double[:, :, :] Msel,
                const double[:, :] coef, double[::1] out):
    cdef Py_ssize_t q = Bsel.shape[0] - 1
    cdef Py_ssize_t nm = Bsel.shape[1]
    cdef Py_ssize_t p = Bsel.shape[2]
    cdef Py_ssize_t c, j, l
    cdef double acc, s
    for j in range(nm):
        acc = 0.0
        for c in range(q + 1):
            s = 0.0
            for l in range(p):
                s += Bsel[c, j, l] * Msel[q - c, j, l]
            acc += coef[c, j] * s
        out[j] = acc
    return np.asarray(out)


def tuple_kernels(const double[:, ::1] X, const long[:, :] idx, Py_ssize_t q):
    cdef Py_ssize_t N = idx.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t r, t, l
    cdef double h, prod
    res = np.empty(N)
    cdef double[::1] out = res
    for r in range(N):
        h = 0.0
        for l in range(p):
            prod = 1.0
            for t in range(q):
                prod *= X[idx[r, t], l] - X[idx[r, q + t], l]
            h += prod
        out[r] = h * h
    return res
