"""Hot kernels with a compiled core and a pure-Python fallback.

The backend is chosen once, at import: the Cython extension ``_ckernels``
when it is built and importable, otherwise ``_pykernels``.  Setting the
environment variable ``TVPSVAR_BACKEND=python`` forces the fallback.

Kernels
-------
kalman_filter
    Forward filter for a random-walk state with time-varying loading.
backward_sample
    Carter-Kohn backward pass from pre-drawn standard normals.
sv_single_move
    Single-move Metropolis sweep over one log-volatility path.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels
from ._pykernels import KernelError, chol_ridge

_names = ("kalman_filter", "backward_sample", "sv_single_move")


def _load_compiled() -> ModuleType | None:
    if os.environ.get("TVPSVAR_BACKEND", "").lower() == "python":
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_active = _compiled if _compiled is not None else _pykernels

BACKEND = "cython" if _compiled is not None else "python"

kalman_filter = _active.kalman_filter
backward_sample = _active.backward_sample
sv_single_move = _active.sv_single_move


def get_backend(name: str) -> ModuleType:
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            from . import _ckernels  # raises ImportError if not built

            return _ckernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    try:
        get_backend("cython")
    except ImportError:
        return False
    return True


__all__ = [
    "BACKEND",
    "KernelError",
    "backward_sample",
    "chol_ridge",
    "compiled_available",
    "get_backend",
    "kalman_filter",
    "sv_single_move",
]
