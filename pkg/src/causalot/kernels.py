"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``CAUSALOT_PURE_PYTHON=1`` forces the NumPy fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CAUSALOT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

price = _impl.price
ratio_test = _impl.ratio_test
eta_update = _impl.eta_update
bessel_paths = _impl.bessel_paths


def backend_module(backend: str):
    """Kernel module for ``backend`` (``cython`` or ``python``)."""
    if backend == "python":
        return _kernels_py
    from . import _kernels  # type: ignore[attr-defined]

    return _kernels
