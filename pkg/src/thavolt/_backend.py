"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``THAVOLT_BACKEND=python`` forces the fallback.
"""
import logging
import os

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

_ckernels = None
if os.environ.get("THAVOLT_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def kernel_matrix(X, d, scale=1.0):
    return _impl.kernel_matrix(_c(X), int(d), float(scale))


def chain_left(L, X, core):
    return _impl.chain_left(_c(L), _c(X), _c(core))


def chain_right(X, core, R):
    return _impl.chain_right(_c(X), _c(core), _c(R))


def local_design(L, Xm, R):
    return _impl.local_design(_c(L), _c(Xm), _c(R))


def row_kron(X, Z):
    return _impl.row_kron(_c(X), _c(Z))


def kernels(name):
    """Return the module implementing backend ``name`` ("python" or "cython")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
