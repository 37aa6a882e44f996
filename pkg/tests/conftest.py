import os
from pathlib import Path

import numpy as np
import pytest

from hdmonitor import kernels

REPO = Path(__file__).resolve().parents[1]
os.environ.setdefault("HDMONITOR_CACHE", str(REPO / ".cache"))

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = BACKENDS[request.param]
    for name in ("l2_scan", "extend_windows", "lq_contract", "tuple_kernels"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cache_dir():
    return Path(os.environ["HDMONITOR_CACHE"])


def rel_close(a, b, tol):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b)))
