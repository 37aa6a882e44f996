import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hdmonitor import sigma_norm as sn
from hdmonitor.sigma_norm import NormEstimates, PhaseIError

from conftest import rel_close


def test_identical_rows_zero():
    X = np.tile([1.0, -2.0, 3.0], (9, 1))
    assert sn.frob_sq_complete(X) == pytest.approx(0.0, abs=1e-12)
    assert sn.lq_norm_incomplete(X, 4, 200, 1) == 0.0
    assert sn.lq_norm_bruteforce(X, 2) == 0.0


def test_zero_data_bruteforce():
    assert sn.lq_norm_bruteforce(np.zeros((8, 2)), 4) == 0.0


def test_n4_closed_form(rng):
    X = rng.normal(size=(4, 3))
    want = ((X[0] - X[1]) @ (X[2] - X[3])) ** 2 / 4
    assert sn.frob_sq_complete(X) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("n", [5, 6, 9, 13])
def test_frob_quadruple_oracle(rng, n):
    X = rng.normal(size=(n, 3))
    assert rel_close(sn.frob_sq_complete(X), sn.frob_sq_bruteforce(X), 1e-9)


def test_frob_exact_rational(rng):
    X = rng.integers(-3, 4, size=(9, 2))
    exact = sn.frob_sq_bruteforce([[Fraction(int(v)) for v in r] for r in X])
    assert isinstance(exact, Fraction)
    assert rel_close(sn.frob_sq_complete(X), float(exact), 1e-12)


def test_size_errors():
    with pytest.raises(PhaseIError):
        sn.frob_sq_complete(np.ones((3, 2)))
    with pytest.raises(PhaseIError):
        sn.lq_norm_incomplete(np.ones((11, 2)), 6, 10)
    with pytest.raises(ValueError):
        sn.lq_norm_incomplete(np.random.default_rng(0).normal(size=(20, 2)), 2, 0)
    with pytest.raises(ValueError):
        sn.lq_norm_bruteforce(np.zeros((40, 2)), 4)


def exact_lq(X, q):
    rows = [[Fraction(int(v)) for v in r] for r in X]
    n, p = len(rows), len(rows[0])
    total = Fraction(0)
    for idx in itertools.combinations(range(n), 2 * q):
        i, j = idx[:q], idx[q:]
        h = Fraction(0)
        for l in range(p):
            prod = Fraction(1)
            for a, b in zip(i, j):
                prod *= rows[a][l] - rows[b][l]
            h += prod
        total += h * h
    return total / (2 ** q * math.comb(n, 2 * q))


def test_lq_bruteforce_exact_rational(rng):
    X = rng.integers(-3, 4, size=(8, 2))
    assert rel_close(sn.lq_norm_bruteforce(X, 2), float(exact_lq(X, 2)), 1e-12)


def test_lq_bruteforce_single_tuple(rng):
    X = rng.normal(size=(4, 3))
    d1, d2 = X[0] - X[2], X[1] - X[3]
    assert sn.lq_norm_bruteforce(X, 2) == pytest.approx((d1 @ d2) ** 2 / 4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 6)), elements=st.floats(-3, 3)))
def test_kernel_factorization(d):
    # (sum_l prod_k d_k(l))^2 equals the naive double sum over (l1, l2)
    assert sn.lq_kernel_naive(d) == pytest.approx(d.prod(axis=0).sum() ** 2, rel=1e-9, abs=1e-9)


def test_tuple_kernels_backends(backend, rng):
    X = rng.normal(size=(20, 5))
    idx = sn.sample_tuples(20, 3, 50, rng)
    got = sn.kernels.tuple_kernels(X, idx, 3)
    want = [sn.lq_kernel_naive(X[r[:3]] - X[r[3:]]) for r in idx]
    assert rel_close(got, want, 1e-9)


def test_sample_tuples_uniform(rng):
    idx = sn.sample_tuples(6, 2, 30000, rng)
    assert np.all(np.diff(idx, axis=1) > 0)
    _, counts = np.unique(idx, axis=0, return_counts=True)
    assert counts.size == math.comb(6, 4)
    expected = 30000 / 15
    assert np.all(np.abs(counts - expected) < 5 * math.sqrt(expected))


def test_two_q2_estimators_differ_but_share_estimand(rng):
    # the 4-index Frobenius estimator pairs (j1,j2),(j3,j4); the general-q
    # estimator at q=2 pairs (i1,j1),(i2,j2): different statistics
    X = rng.normal(size=(8, 3))
    assert not rel_close(sn.frob_sq_complete(X), sn.lq_norm_bruteforce(X, 2), 1e-6)
    r = np.random.default_rng(7)
    a, b = [], []
    for _ in range(400):
        Y = r.normal(size=(8, 3))
        a.append(sn.frob_sq_complete(Y))
        b.append(sn.lq_norm_bruteforce(Y, 2))
    for v in (a, b):
        assert abs(np.mean(v) - 3.0) < 4 * np.std(v) / math.sqrt(len(v))


def test_incomplete_covers_complete_when_exhaustive(rng):
    # with every admissible tuple used once the incomplete average is the complete one
    X = rng.normal(size=(8, 2))
    idx = np.array(list(itertools.combinations(range(8), 4)))
    Xc = X - X.mean(0)
    inc = sn.kernels.tuple_kernels(Xc, idx, 2).sum() / (4 * len(idx))
    assert rel_close(inc, sn.lq_norm_bruteforce(X, 2), 1e-12)


@pytest.mark.parametrize("q", [2, 4])
def test_unbiased_identity(q):
    n, p, R = 60, 20, 500
    vals = []
    for r in range(R):
        X = np.random.default_rng(1000 + r).normal(size=(n, p))
        vals.append(sn.frob_sq_complete(X) if q == 2 else sn.lq_norm_incomplete(X, q, seed=r))
    se = np.std(vals, ddof=1) / math.sqrt(R)
    assert abs(np.mean(vals) - p) < 4 * se


def test_incomplete_unbiased_q2_large_N():
    vals = [sn.lq_norm_incomplete(np.random.default_rng(50 + r).normal(size=(100, 20)), 2, 20000, r)
            for r in range(200)]
    se = np.std(vals, ddof=1) / math.sqrt(200)
    assert abs(np.mean(vals) - 20) < 3 * se


def test_ratio_consistency_trend():
    p = 50
    sds = []
    for n in (50, 100, 200):
        ratios = [sn.frob_sq_complete(np.random.default_rng(n * 1000 + r).normal(size=(n, p))) / p
                  for r in range(150)]
        sds.append(np.std(ratios, ddof=1))
    assert sds[0] > sds[1] > sds[2]


def test_translation_determinism_scale(rng):
    X = rng.normal(size=(30, 4))
    c = rng.normal(size=4) * 20
    assert rel_close(sn.frob_sq_complete(X + c), sn.frob_sq_complete(X), 1e-9)
    assert rel_close(sn.lq_norm_incomplete(X + c, 4, 3000, 5), sn.lq_norm_incomplete(X, 4, 3000, 5), 1e-9)
    a = sn.lq_norm_incomplete(X, 6, 5000, 9)
    assert a == sn.lq_norm_incomplete(X, 6, 5000, 9)
    assert a != sn.lq_norm_incomplete(X, 6, 5000, 10)
    assert rel_close(sn.lq_norm_incomplete(1.7 * X, 6, 5000, 9), 1.7 ** 12 * a, 1e-9)
    assert rel_close(sn.frob_sq_complete(1.7 * X), 1.7 ** 4 * sn.frob_sq_complete(X), 1e-9)


def test_estimates_roundtrip_and_guards(rng):
    X = rng.normal(size=(40, 5))
    est = sn.estimate_norms(X, (2, 4, 6), N=2000, seed=3)
    assert est.lq[2] == est.frob_sq and est.method[2]["kind"] == "complete"
    assert est.method[6] == {"kind": "incomplete", "N": 2000, "seed": 3}
    back = NormEstimates.from_dict(est.to_dict())
    assert back == est
    with pytest.raises(PhaseIError):
        sn.estimate_norms(np.ones((40, 5)), (2,))
    neg = NormEstimates(n_train=40, frob_sq=-1.0, lq={2: -1.0})
    with pytest.raises(PhaseIError):
        neg.require_positive((2,))
