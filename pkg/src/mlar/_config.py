"""Runtime backend selection.

The forward/backward kernels exist in two versions: numba-compiled loops and a
pure-numpy fallback.  Setting the environment variable ``MLAR_DISABLE_NUMBA=1``
before import forces the numpy path (useful for debugging and benchmarking).
"""

import os

_ENV_FLAG = "MLAR_DISABLE_NUMBA"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _disabled_by_env() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def set_threads(n_threads: int) -> None:
    """Cap the numba threading layer; harmless if numba is unavailable."""
    if not HAVE_NUMBA or n_threads is None:
        return
    import warnings

    import numba

    cap = numba.config.NUMBA_NUM_THREADS
    with warnings.catch_warnings():
        # threading-layer probing can warn about old TBB builds; the layer
        # is irrelevant to the serial kernels
        warnings.simplefilter("ignore")
        numba.set_num_threads(max(1, min(int(n_threads), cap)))
