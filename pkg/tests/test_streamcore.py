import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hdmonitor.streamcore import (
    ConfigError, CusumState, DataError, MonitorConfig, Observation, horizon,
)


def test_observation_validation():
    with pytest.raises(DataError):
        Observation(1, [1.0, np.nan])
    with pytest.raises(DataError):
        Observation(0, [1.0])
    with pytest.raises(DataError):
        Observation(1, np.zeros((2, 2)))


def test_config_defaults_and_roundtrip():
    cfg = MonitorConfig(n=100, p=50)
    assert cfg.q_set == (2, 6) and cfg.T == 2.0 and cfg.alpha == 0.1 and cfg.horizon == 200
    assert MonitorConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kw", [
    dict(q_set=(3,)), dict(q_set=(10,)), dict(n=12, q_set=(6,)), dict(T=1.0),
    dict(alpha=1.0), dict(boundary="T4"), dict(p=0), dict(n=7, q_set=(2,)),
    dict(n=20, T=1.1, q_set=(6,)),
])
def test_config_errors(kw):
    base = dict(n=20, p=3, q_set=(2,))
    base.update(kw)
    with pytest.raises(ConfigError):
        MonitorConfig(**base)


def test_horizon_exact():
    assert horizon(100, 2) == 200
    assert horizon(10, 1.3) == 13  # 10 * 1.3 is 12.999... in binary floating point


def test_push_zero_and_symmetry():
    s = CusumState(3, 5)
    s.push(Observation(1, np.zeros(3)))
    assert np.all(s.B[1] == 0) and s.C[1] == 0
    x = np.array([1.0, -2.0, 0.5])
    s = CusumState(3, 5).push(Observation(1, x)).push(Observation(2, -x))
    assert np.allclose(s.B[2], 0) and s.C[2] == pytest.approx(2 * x @ x)


def test_push_errors():
    s = CusumState(2, 2)
    with pytest.raises(DataError):
        s.push(Observation(2, [0.0, 0.0]))
    with pytest.raises(DataError):
        s.push(Observation(1, [0.0]))
    s.push(Observation(1, [0.0, 0.0])).push(Observation(2, [0.0, 0.0]))
    with pytest.raises(DataError):
        s.push(Observation(3, [0.0, 0.0]))


def test_cusum_matches_naive(rng):
    X = rng.normal(size=(10, 3))
    s = CusumState(3, 10).extend(X)
    for t in range(1, 11):
        assert np.allclose(s.B[t], X[:t].sum(0), rtol=1e-12)
        assert s.C[t] == pytest.approx(sum(x @ x for x in X[:t]), rel=1e-12)


def naive_pair_sum(X, a, b):
    return sum(X[i] @ X[j] for i in range(a - 1, b) for j in range(i + 1, b))


def test_pair_sum_oracle(rng):
    X = rng.normal(size=(12, 4))
    s = CusumState(4, 12).extend(X)
    for a in range(1, 13):
        assert s.pair_sum(a, a) == pytest.approx(0.0, abs=1e-12)
        for b in range(a, 13):
            assert s.pair_sum(a, b) == pytest.approx(naive_pair_sum(X, a, b), rel=1e-10, abs=1e-10)
    with pytest.raises(IndexError):
        s.pair_sum(0, 3)
    with pytest.raises(IndexError):
        s.pair_sum(3, 13)


def test_pair_sum_identical_rows():
    v = np.array([1.0, 2.0, -1.0])
    s = CusumState(3, 8).extend(np.tile(v, (8, 1)))
    assert s.pair_sum(2, 7) == pytest.approx(15 * (v @ v))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (9, 3), elements=st.floats(-5, 5)), st.integers(1, 8), st.randoms())
def test_pair_sum_telescoping_and_permutation(X, a, rnd):
    s = CusumState(3, 9).extend(X)
    for b in range(a, 8):
        lhs = s.pair_sum(a, b) + sum(X[i] @ X[b] for i in range(a - 1, b))
        assert lhs == pytest.approx(s.pair_sum(a, b + 1), rel=1e-9, abs=1e-9)
    perm = list(range(a - 1, 9))
    rnd.shuffle(perm)
    Y = X.copy()
    Y[a - 1:] = X[perm]
    s2 = CusumState(3, 9).extend(Y)
    assert s2.pair_sum(a, 9) == pytest.approx(s.pair_sum(a, 9), rel=1e-9, abs=1e-9)


def test_memory_bound():
    s = CusumState(5, 40)
    assert s.B.size + s.C.size <= 41 * 6
