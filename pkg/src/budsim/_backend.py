"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting
``BUDSIM_BACKEND=numpy`` (or ``BUDSIM_DISABLE_NUMBA=1``) forces the
vectorised pure-numpy fallback everywhere.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev environment
    numba = None
    HAVE_NUMBA = False


def _numba_requested():
    if os.environ.get("BUDSIM_DISABLE_NUMBA", "").strip() not in ("", "0"):
        return False
    return os.environ.get("BUDSIM_BACKEND", "numba").strip().lower() != "numpy"


USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
