"""Kernel backend selection.

The hot kernels exist twice: numba-compiled (``_kernels_numba``) and pure
numpy (``_kernels_numpy``). The env var ``KVTRIAGE_BACKEND`` picks one:

    KVTRIAGE_BACKEND=numba   force the JIT backend (error if numba missing)
    KVTRIAGE_BACKEND=numpy   force the pure-numpy fallback
    unset / auto             numba when importable, else numpy

``benchmarks/bench_kernels.py`` times the two side by side.
"""

import os

from . import _kernels_numpy

BACKEND_ENV = "KVTRIAGE_BACKEND"

_ACTIVE = None
_ACTIVE_NAME = None


def _load_numba_backend():
    from . import _kernels_numba

    return _kernels_numba


def _resolve(choice):
    if choice == "numpy":
        return _kernels_numpy, "numpy"
    if choice == "numba":
        return _load_numba_backend(), "numba"
    if choice == "auto":
        try:
            return _load_numba_backend(), "numba"
        except ImportError:
            return _kernels_numpy, "numpy"
    raise ValueError(
        f"unknown {BACKEND_ENV} value {choice!r}; expected 'auto', 'numba' or 'numpy'"
    )


def active_backend():
    """The kernel module currently in use (selected once, lazily)."""
    global _ACTIVE, _ACTIVE_NAME
    if _ACTIVE is None:
        choice = os.environ.get(BACKEND_ENV, "auto").strip().lower() or "auto"
        _ACTIVE, _ACTIVE_NAME = _resolve(choice)
    return _ACTIVE


def backend_name():
    active_backend()
    return _ACTIVE_NAME


def use_backend(name):
    """Force a backend by name ('auto', 'numba', 'numpy'). For tests/benchmarks."""
    global _ACTIVE, _ACTIVE_NAME
    _ACTIVE, _ACTIVE_NAME = _resolve(name)
    return _ACTIVE
