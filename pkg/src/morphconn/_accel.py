"""Optional numba acceleration.

Set ``MORPHCONN_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. If numba cannot be imported the numpy kernels are used as well.
"""
import os

_DISABLED = os.environ.get("MORPHCONN_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}

try:
    import numba

    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None
    NUMBA_INSTALLED = False

USE_NUMBA = NUMBA_INSTALLED and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator.

    Compiled versions are always built when numba is available so the
    benchmark and equivalence tests can compare both paths; ``USE_NUMBA``
    only decides which path the public dispatchers call.
    """
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
