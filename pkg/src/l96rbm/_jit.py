"""Numba toggle.

Set ``L96RBM_DISABLE_NUMBA=1`` before import to run the pure-numpy paths.
"""
import os

_FLAG = os.environ.get("L96RBM_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and not DISABLED

if USE_NUMBA:
    # skip the TBB probe, which warns on hosts with an old libtbb
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, otherwise a no-op decorator."""
    if USE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def set_threads(n):
    if USE_NUMBA and n:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
