"""Numba switch.

Set ``DOSED_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
from __future__ import annotations

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("DOSED_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity otherwise.

    Decorated functions stay callable either way; whether the compiled or
    the numpy version is dispatched is decided in :mod:`dosed.kernels`.
    """
    kwargs.setdefault("cache", True)
    if _HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]):
        return args[0]
    return wrap


def set_threads(n: int) -> None:
    """Cap numba and BLAS worker threads."""
    n = max(1, int(n))
    if _HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(n)
    except ImportError:  # pragma: no cover
        pass
