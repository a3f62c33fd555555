"""JIT switch for the hot kernels.

Numba is used when importable unless ``DGPKERN_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel runs its pure-numpy twin. The
backend can also be flipped at runtime with :func:`set_backend` (the
benchmark and the backend-agreement tests rely on that).
"""

import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

NUMBA_OPTS = {"cache": True}

_FALSY = {"", "0", "false", "no", "off"}
_disabled = os.getenv("DGPKERN_DISABLE_NUMBA", "").strip().lower() not in _FALSY
_use_numba = HAVE_NUMBA and not _disabled


def njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(func, **NUMBA_OPTS)


def use_numba():
    return _use_numba


def backend():
    return "numba" if _use_numba else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _use_numba
    previous = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous
