"""Optional numba acceleration.

Set ``MACALLOC_DISABLE_NUMBA=1`` before import to run every kernel through
its pure numpy/Python path. The two paths agree up to floating-point
rounding (LLVM may contract or reorder operations); combinatorial outputs
such as decoding orders and violated subsets are the same.
"""
import os

_DISABLED = os.environ.get("MACALLOC_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func
    return decorator


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
