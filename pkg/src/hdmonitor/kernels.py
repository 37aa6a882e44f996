"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``HDMONITOR_PURE_PYTHON`` is set, the numpy implementation is used. Both
backends expose ``l2_scan``, ``extend_windows``, ``lq_contract`` and
``tuple_kernels`` with identical semantics.
"""

import os

from . import _kernels_py

if os.environ.get("HDMONITOR_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
l2_scan = _impl.l2_scan
extend_windows = _impl.extend_windows
lq_contract = _impl.lq_contract
tuple_kernels = _impl.tuple_kernels


def available_backends():
    """Modules implementing the kernel API that can be imported here."""
    out = {"numpy": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
