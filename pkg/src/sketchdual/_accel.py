"""Backend switch for the hot kernels.

Every kernel in :mod:`sketchdual.kernels` has a numba loop implementation and
a vectorised numpy implementation. The numba path is used when numba imports
and ``SKETCHDUAL_NO_NUMBA`` is unset; setting it to ``1`` selects numpy.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_ENV_FLAG = "SKETCHDUAL_NO_NUMBA"

HAVE_NUMBA = numba is not None
_backend = "numpy" if (not HAVE_NUMBA or os.environ.get(_ENV_FLAG, "") not in ("", "0")) else "numba"


def jit(fn):
    """Compile ``fn`` with ``numba.njit`` when available, else return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def use_numba():
    return _backend == "numba"
