"""Backend selection for the GRU time scan.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``PREDICT_CLUSTER_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _scan_py

_compiled = None
if os.environ.get("PREDICT_CLUSTER_BACKEND", "").lower() != "python":
    try:
        from . import _scan_ext as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled scan kernel is not available")
        return _compiled
    if backend == "python":
        return _scan_py
    raise ValueError(f"unknown backend {backend!r}")


def scan_forward(xproj, U, h0, mask, reverse=False, backend=None):
    """Run a GRU over T steps; returns per-step states (T, B, H) and a cache."""
    return _impl(backend).scan_forward(
        np.ascontiguousarray(xproj, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64),
        np.ascontiguousarray(h0, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.float64),
        reverse,
    )


def scan_backward(dhs, U, cache, mask, reverse=False, backend=None):
    """Gradients (dxproj, dU, dh0) of a scan given per-step state gradients."""
    return _impl(backend).scan_backward(
        np.ascontiguousarray(dhs, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64),
        tuple(np.ascontiguousarray(c, dtype=np.float64) for c in cache),
        np.ascontiguousarray(mask, dtype=np.float64),
        reverse,
    )


def has_compiled() -> bool:
    return _compiled is not None
