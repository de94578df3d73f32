"""Propagation kernels with a compiled fast path and a numpy fallback.

The Cython extension is preferred when importable; set
``BRAGG_FORGE_BACKEND=python`` (or ``cython``) to force a choice.  Both
implementations expose the same four functions and agree to near machine
precision; `tests/test_kernels.py` pins that equivalence.
"""
from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("BRAGG_FORGE_BACKEND", "").strip().lower()

if _requested in ("python", "numpy"):
    _impl = numpy_backend
elif _requested in ("", "cython"):
    try:
        from . import _cy_core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "BRAGG_FORGE_BACKEND=cython but the compiled kernel is not "
                "available; reinstall with a working C toolchain"
            )
        _impl = numpy_backend
else:
    raise ValueError(
        f"unknown BRAGG_FORGE_BACKEND={_requested!r}; use 'cython' or 'python'"
    )

BACKEND_NAME: str = _impl.BACKEND_NAME
segment_unitaries = _impl.segment_unitaries
chain_product = _impl.chain_product
total_unitaries = _impl.total_unitaries
chain_with_adjoint = _impl.chain_with_adjoint

__all__ = [
    "BACKEND_NAME",
    "segment_unitaries",
    "chain_product",
    "total_unitaries",
    "chain_with_adjoint",
    "numpy_backend",
]
