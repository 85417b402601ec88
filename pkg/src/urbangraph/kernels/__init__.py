"""Hot numeric kernels with a compiled and a pure-numpy backend.

The numba backend is used by default. Set ``URBANGRAPH_PURE_NUMPY=1`` before
import to force the numpy fallback (also used automatically when numba is
not importable). Both backends expose the same functions:

    haversine_matrix(lat_a, lon_a, lat_b, lon_b) -> (na, nb) km
    k_smallest(dist, k) -> (n, min(k, m)) column indices, ties to lower index
    bfs_multi_source(indptr, indices, sources) -> hop distance, -1 unreachable
    csr_spmm(indptr, indices, data, dense) -> sparse @ dense
    split_scan(values_sorted, labels_sorted) -> (entropy gain, threshold)
    tree_apply(X, feature, threshold, left, right) -> leaf index per row
"""
import os

from . import _numpy

_FLAG = "URBANGRAPH_PURE_NUMPY"


def _want_numpy():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


if _want_numpy():
    _backend = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _jit as _backend

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba missing
        _backend = _numpy
        BACKEND = "numpy"

haversine_matrix = _backend.haversine_matrix
k_smallest = _backend.k_smallest
bfs_multi_source = _backend.bfs_multi_source
csr_spmm = _backend.csr_spmm
split_scan = _backend.split_scan
tree_apply = _backend.tree_apply


def set_threads(n: int) -> int:
    """Cap numba worker threads; returns the cap in effect (1 on the numpy backend)."""
    if n < 1:
        raise ValueError("threads must be >= 1")
    if BACKEND != "numba":
        return 1
    import warnings

    import numba

    n = min(int(n), numba.config.NUMBA_NUM_THREADS)
    with warnings.catch_warnings():
        # an old system TBB only means numba falls back to another layer
        warnings.filterwarnings("ignore", message="The TBB threading layer")
        numba.set_num_threads(n)
    return n

__all__ = [
    "BACKEND",
    "haversine_matrix",
    "k_smallest",
    "bfs_multi_source",
    "csr_spmm",
    "split_scan",
    "tree_apply",
    "set_threads",
]
