"""Hot inner loops with a numba path and a pure-numpy fallback.

The backend is chosen once at import: numba when it imports cleanly, unless
the environment variable ``EQUIPART_DISABLE_NUMBA`` is set to a true value
(``1``, ``true``, ``yes``).  Both implementations stay importable as
``kernels.numpy_impl`` / ``kernels.numba_impl`` for cross-checks and the
benchmark script.
"""

import os

import numpy as np

from . import _numpy as numpy_impl

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # skip the TBB probe, which warns on older system TBB builds
    os.environ["NUMBA_THREADING_LAYER_PRIORITY"] = "omp workqueue tbb"

try:
    from . import _numba as numba_impl
except ImportError:  # numba missing or broken
    numba_impl = None

_DISABLED = os.environ.get("EQUIPART_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
USE_NUMBA = numba_impl is not None and not _DISABLED
_impl = numba_impl if USE_NUMBA else numpy_impl


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def component_cost(breaks, pmass) -> float:
    return float(_impl.component_cost(np.ascontiguousarray(breaks, dtype=np.uint8),
                                      np.ascontiguousarray(pmass, dtype=float)))


def hot_candidate_costs(breaks, pmass) -> np.ndarray:
    return _impl.hot_candidate_costs(np.ascontiguousarray(breaks, dtype=np.uint8),
                                     np.ascontiguousarray(pmass, dtype=float))


def kde_sum(xe, te, xs, ts, h) -> np.ndarray:
    arrs = [np.ascontiguousarray(a, dtype=float).ravel() for a in (xe, te, xs, ts)]
    return _impl.kde_sum(*arrs, float(h))


def nearest_assign(points, centers):
    return _impl.nearest_assign(np.ascontiguousarray(points, dtype=float),
                                np.ascontiguousarray(centers, dtype=float))


def set_threads(n: int) -> None:
    if USE_NUMBA and n and n > 0:
        import numba

        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
