"""Numba shim.

Set ``CROSSVIEW_DISABLE_NUMBA=1`` to force the pure-numpy kernels (also used
automatically when numba is not importable).
"""
import os
import warnings

_DISABLED = os.environ.get("CROSSVIEW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from numba import config as _nb_config, njit, prange

    HAVE_NUMBA = True
    # try TBB last (probing it warns on old system builds) unless the
    # user picked a threading layer explicitly
    if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        _nb_config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:
    if not _DISABLED:
        warnings.warn("numba is not installed - falling back to numpy kernels")
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
