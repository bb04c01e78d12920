"""Numba switch for the hot kernels.

Set ``DEEPBOW_DISABLE_NUMBA=1`` to force the pure-numpy path, e.g. when
numba is unavailable or when comparing the two paths in benchmarks.
"""

import os

_DISABLED = os.environ.get("DEEPBOW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by DEEPBOW_DISABLE_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # bare @njit and @njit(...) both work; the function is returned untouched
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
