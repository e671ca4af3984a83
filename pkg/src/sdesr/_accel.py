"""Numba switch.

Kernels are compiled with numba when it is importable and ``SDESR_NUMBA`` is
not set to ``0``; otherwise the pure-numpy fallbacks in :mod:`sdesr.kernels`
are used.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("SDESR_NUMBA", "1") not in ("0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
