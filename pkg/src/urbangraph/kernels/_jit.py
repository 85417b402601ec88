"""Numba-compiled versions of the hot loops (see ``_numpy`` for the reference)."""
import numpy as np
from numba import njit

EARTH_RADIUS_KM = 6371.0088


@njit(cache=True)
def _haversine_matrix(lat_a, lon_a, lat_b, lon_b):
    na = lat_a.shape[0]
    nb = lat_b.shape[0]
    out = np.empty((na, nb), dtype=np.float64)
    rad = np.pi / 180.0
    for i in range(na):
        la = lat_a[i] * rad
        cla = np.cos(la)
        for j in range(nb):
            lb = lat_b[j] * rad
            s1 = np.sin((lb - la) / 2.0)
            s2 = np.sin((lon_b[j] * rad - lon_a[i] * rad) / 2.0)
            h = s1 * s1 + cla * np.cos(lb) * s2 * s2
            if h > 1.0:
                h = 1.0
            elif h < 0.0:
                h = 0.0
            out[i, j] = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))
    return out


def haversine_matrix(lat_a, lon_a, lat_b, lon_b):
    return _haversine_matrix(
        np.ascontiguousarray(lat_a, dtype=np.float64),
        np.ascontiguousarray(lon_a, dtype=np.float64),
        np.ascontiguousarray(lat_b, dtype=np.float64),
        np.ascontiguousarray(lon_b, dtype=np.float64),
    )


@njit(cache=True)
def _k_smallest(dist, k):
    n, m = dist.shape
    out = np.empty((n, k), dtype=np.int64)
    buf_d = np.empty(k, dtype=np.float64)
    for i in range(n):
        filled = 0
        for j in range(m):
            d = dist[i, j]
            if filled == k and not d < buf_d[k - 1]:
                continue
            # strict comparison: an equal distance never displaces a lower index
            pos = filled if filled < k else k - 1
            while pos > 0 and d < buf_d[pos - 1]:
                if pos < k:
                    buf_d[pos] = buf_d[pos - 1]
                    out[i, pos] = out[i, pos - 1]
                pos -= 1
            buf_d[pos] = d
            out[i, pos] = j
            if filled < k:
                filled += 1
    return out


def k_smallest(dist, k):
    k = min(k, dist.shape[1])
    return _k_smallest(np.ascontiguousarray(dist, dtype=np.float64), k)


@njit(cache=True)
def _bfs_multi_source(indptr, indices, sources):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if dist[s] < 0:
            dist[s] = 0
            queue[tail] = s
            tail += 1
    while head < tail:
        u = queue[head]
        head += 1
        for p in range(indptr[u], indptr[u + 1]):
            v = indices[p]
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue[tail] = v
                tail += 1
    return dist


def bfs_multi_source(indptr, indices, sources):
    return _bfs_multi_source(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(sources, dtype=np.int64),
    )


@njit(cache=True)
def _csr_spmm(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    d = dense.shape[1]
    out = np.zeros((n, d), dtype=np.float64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for c in range(d):
                out[i, c] += w * dense[j, c]
    return out


def csr_spmm(indptr, indices, data, dense):
    return _csr_spmm(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
        np.ascontiguousarray(dense, dtype=np.float64),
    )


@njit(cache=True)
def _h2(pos, total):
    p = pos / total
    q = 1.0 - p
    h = 0.0
    if p > 0.0:
        h -= p * np.log2(p)
    if q > 0.0:
        h -= q * np.log2(q)
    return h


@njit(cache=True)
def _split_scan(values, labels):
    n = values.shape[0]
    if n < 2:
        return 0.0, np.nan
    n_pos = 0
    for i in range(n):
        n_pos += labels[i]
    parent = _h2(float(n_pos), float(n))
    best_gain = -np.inf
    best_thr = np.nan
    left_pos = 0
    for i in range(n - 1):
        left_pos += labels[i]
        if not values[i] < values[i + 1]:
            continue
        ln = float(i + 1)
        rn = n - ln
        child = (ln * _h2(float(left_pos), ln) + rn * _h2(float(n_pos - left_pos), rn)) / n
        gain = parent - child
        if gain > best_gain:
            best_gain = gain
            best_thr = 0.5 * (values[i] + values[i + 1])
    if best_gain == -np.inf:
        return 0.0, np.nan
    return best_gain, best_thr


def split_scan(values, labels):
    g, t = _split_scan(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
    )
    return float(g), float(t)


@njit(cache=True)
def _tree_apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def tree_apply(X, feature, threshold, left, right):
    return _tree_apply(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(feature, dtype=np.int64),
        np.ascontiguousarray(threshold, dtype=np.float64),
        np.ascontiguousarray(left, dtype=np.int64),
        np.ascontiguousarray(right, dtype=np.int64),
    )
