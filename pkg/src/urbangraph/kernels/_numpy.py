"""Pure-numpy versions of the hot loops.

Each function here has a twin of the same name and signature in ``_jit``.
The two must agree exactly on integer outputs and to rounding on floats.
"""
import numpy as np

EARTH_RADIUS_KM = 6371.0088


def haversine_matrix(lat_a, lon_a, lat_b, lon_b):
    la = np.radians(np.asarray(lat_a, dtype=np.float64))[:, None]
    lb = np.radians(np.asarray(lat_b, dtype=np.float64))[None, :]
    dlat = lb - la
    dlon = np.radians(np.asarray(lon_b, dtype=np.float64))[None, :] - np.radians(
        np.asarray(lon_a, dtype=np.float64)
    )[:, None]
    h = np.sin(dlat / 2.0) ** 2 + np.cos(la) * np.cos(lb) * np.sin(dlon / 2.0) ** 2
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def k_smallest(dist, k):
    # stable sort keeps the lower column index first among equal distances
    k = min(k, dist.shape[1])
    order = np.argsort(dist, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k]).astype(np.int64)


def bfs_multi_source(indptr, indices, sources):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    if len(sources) == 0:
        return dist
    frontier = np.unique(np.asarray(sources, dtype=np.int64))
    dist[frontier] = 0
    level = 0
    while frontier.size:
        level += 1
        starts = indptr[frontier]
        counts = indptr[frontier + 1] - starts
        if counts.sum() == 0:
            break
        # gather all neighbours of the frontier in one shot
        offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
        nbrs = indices[np.arange(counts.sum()) + offsets]
        nbrs = np.unique(nbrs)
        nbrs = nbrs[dist[nbrs] < 0]
        dist[nbrs] = level
        frontier = nbrs
    return dist


def csr_spmm(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    contrib = dense[indices] * data[:, None]
    nonempty = indptr[:-1] < indptr[1:]
    out[nonempty] = np.add.reduceat(contrib, indptr[:-1][nonempty], axis=0)
    return out


def _entropy2(pos, total):
    # binary entropy in bits of pos/total, elementwise, with 0 log 0 = 0
    p = np.divide(pos, total, out=np.zeros_like(pos, dtype=np.float64), where=total > 0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        hp = np.where(p > 0, -p * np.log2(p), 0.0)
        hq = np.where(q > 0, -q * np.log2(q), 0.0)
    return hp + hq


def split_scan(values, labels):
    n = values.shape[0]
    if n < 2:
        return 0.0, np.nan
    labels = labels.astype(np.int64)
    n_pos = labels.sum()
    parent = _entropy2(np.array([float(n_pos)]), np.array([float(n)]))[0]
    # candidate cut after position i (0-based) where values[i] < values[i+1]
    cut = np.nonzero(values[:-1] < values[1:])[0]
    if cut.size == 0:
        return 0.0, np.nan
    left_n = (cut + 1).astype(np.float64)
    left_pos = np.cumsum(labels)[cut].astype(np.float64)
    right_n = n - left_n
    right_pos = n_pos - left_pos
    child = (left_n * _entropy2(left_pos, left_n) + right_n * _entropy2(right_pos, right_n)) / n
    gains = parent - child
    best = int(np.argmax(gains))
    i = cut[best]
    return float(gains[best]), 0.5 * (values[i] + values[i + 1])


def tree_apply(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = left[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = left[node] >= 0
    return node
