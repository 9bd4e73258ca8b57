"""Backend selection for the selective-scan hot loop.

The compiled Cython kernel is used when it was built; otherwise the numpy
loop in :mod:`mdsf._scan_py`. Set ``MDSF_BACKEND=python`` to force the
fallback.
"""
import os

import numpy as np

from . import _scan_py

try:
    from . import _scan_ext
except ImportError:  # extension not built
    _scan_ext = None

BACKENDS = {"python": _scan_py}
if _scan_ext is not None:
    BACKENDS["compiled"] = _scan_ext

_requested = os.environ.get("MDSF_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    _requested = ""
DEFAULT_BACKEND = _requested or ("compiled" if _scan_ext is not None else "python")


def get_backend(name=None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable scan backend {name!r}; have {sorted(BACKENDS)}") from None


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def scan_forward(x, delta, A, B, Cm, D, store_states=True, backend=None):
    return get_backend(backend).scan_forward(_c(x), _c(delta), _c(A), _c(B), _c(Cm), _c(D), store_states)


def scan_backward(gy, x, delta, A, B, Cm, D, hs, backend=None):
    return get_backend(backend).scan_backward(_c(gy), _c(x), _c(delta), _c(A), _c(B), _c(Cm), _c(D), _c(hs))
