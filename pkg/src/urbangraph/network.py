"""Tract-facility urban networks, proximity graphs and hop features.

``build_urban_network`` links every tract to its ``k`` closest facilities of
each requested kind (distance ties go to the lexicographically smaller
facility id). Facility nodes only appear once some tract links to them.

``build_proximity_graph`` is the auxiliary graph used for hop features: a
symmetrised k-nearest-neighbour graph over all tracts and facilities.
"""
from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from ._io import open_output
from .ingest import FACILITY_KINDS, Dataset, Kind

MAX_K = 10
HOP_COLUMNS = ("hops_school", "hops_hospital", "hops_subway")
UNREACHABLE = -1
_ROW_CHUNK = 512
# distances are compared after rounding to 1e-9 km, so equal-looking distances
# that differ only by floating-point noise count as ties
TIE_DECIMALS = 9


class NoFacilities(ValueError):
    def __init__(self, kind):
        self.kind = kind
        super().__init__(f"no facilities of kind {Kind.parse(kind).slug!r}")


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NodeRef:
    kind: Kind
    id: str

    def __str__(self):
        return f"{self.kind.slug}:{self.id}"


class UrbanNetwork:
    """Undirected weighted graph over ``NodeRef`` nodes, stored in sorted node order.

    Edges are kept once as ``(u, v)`` index pairs with ``u < v``; ``indptr`` /
    ``indices`` / ``edge_ids`` give a symmetric CSR view with neighbour lists
    in ascending node order.
    """

    def __init__(self, nodes, coords, labels, edges, weights, kind="urban"):
        order = sorted(range(len(nodes)), key=lambda i: nodes[i])
        remap = np.empty(len(nodes), dtype=np.int64)
        remap[order] = np.arange(len(nodes))
        self.nodes: tuple[NodeRef, ...] = tuple(nodes[i] for i in order)
        self.coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)[order]
        self.labels = np.asarray(labels, dtype=np.float64)[order]
        self.kind = kind
        e = remap[np.asarray(edges, dtype=np.int64).reshape(-1, 2)]
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        if np.any(lo == hi):
            raise ValueError("self-loops are not allowed")
        eo = np.lexsort((hi, lo))
        lo, hi, w = lo[eo], hi[eo], w[eo]
        if len(lo) > 1 and np.any((lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])):
            raise ValueError("duplicate undirected edge")
        self.edges = np.stack([lo, hi], axis=1) if len(lo) else np.zeros((0, 2), dtype=np.int64)
        self.weights = w
        self._index = {ref: i for i, ref in enumerate(self.nodes)}
        self._build_csr()
        for a in (self.coords, self.labels, self.edges, self.weights, self.indptr, self.indices, self.edge_ids):
            a.setflags(write=False)

    def _build_csr(self):
        n, m = len(self.nodes), len(self.edges)
        u = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        v = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((v, u))
        self.indices = v[order].astype(np.int64)
        self.edge_ids = eid[order].astype(np.int64)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=n), out=self.indptr[1:])

    def __len__(self):
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, ref: NodeRef) -> int:
        return self._index[ref]

    def __contains__(self, ref) -> bool:
        return ref in self._index

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def kinds(self) -> np.ndarray:
        return np.array([int(r.kind) for r in self.nodes], dtype=np.int64)

    def nodes_of(self, kind) -> np.ndarray:
        kind = Kind.parse(kind)
        return np.array([i for i, r in enumerate(self.nodes) if r.kind == kind], dtype=np.int64)

    def adjacency(self, mode: str = "binary"):
        """CSR ``(indptr, indices, data)`` with edge values for ``mode``.

        ``binary`` gives 1 per edge; ``inverse_distance`` gives ``1 / (1 + km)``.
        """
        w = self.weights[self.edge_ids]
        if mode == "binary":
            data = np.ones_like(w)
        elif mode == "inverse_distance":
            data = 1.0 / (1.0 + w)
        else:
            raise ValueError(f"unknown edge weight mode {mode!r}")
        return self.indptr, self.indices, data

    def edge_set(self) -> set[tuple[NodeRef, NodeRef]]:
        return {(self.nodes[a], self.nodes[b]) for a, b in self.edges}


@dataclass(frozen=True, eq=False)
class HopFeatures:
    tract_ids: tuple[str, ...]
    values: np.ndarray  # (n_tracts, 3) int, UNREACHABLE where no path

    columns = HOP_COLUMNS


def _tract_arrays(ds: Dataset):
    tr = sorted(ds.tracts, key=lambda t: t.id)
    refs = [NodeRef(Kind.TRACT, t.id) for t in tr]
    coords = [(t.center.lat, t.center.lon) for t in tr]
    labels = [np.nan if t.label is None else t.label for t in tr]
    return refs, coords, labels


def _parse_kinds(kinds: Iterable) -> tuple[Kind, ...]:
    out = []
    for k in kinds:
        k = Kind.parse(k)
        if k not in FACILITY_KINDS:
            raise ValueError(f"{k.slug} is not a facility kind")
        if k not in out:
            out.append(k)
    return tuple(sorted(out))


def build_urban_network(ds: Dataset, kinds=FACILITY_KINDS, k: int = 2) -> UrbanNetwork:
    """Link each tract to its ``min(k, |P|)`` nearest facilities of each kind P.

    Ties in distance (to 1e-9 km) go to the lexicographically smaller facility id.
    """
    if not 1 <= int(k) <= MAX_K:
        raise ValueError(f"k must be in 1..{MAX_K}, got {k}")
    kinds = _parse_kinds(kinds)
    refs, coords, labels = _tract_arrays(ds)
    tlat = np.array([c[0] for c in coords])
    tlon = np.array([c[1] for c in coords])
    n_t = len(refs)
    nodes, node_coords, node_labels = list(refs), list(coords), list(labels)
    edges, weights = [], []
    for kind in kinds:
        facs = sorted(ds.facilities[kind], key=lambda f: f.id)
        if not facs:
            raise NoFacilities(kind)
        flat = np.array([f.location.lat for f in facs])
        flon = np.array([f.location.lon for f in facs])
        nearest = np.empty((n_t, min(k, len(facs))), dtype=np.int64)
        dist = np.empty(nearest.shape)
        for s in range(0, n_t, _ROW_CHUNK):
            D = kernels.haversine_matrix(tlat[s : s + _ROW_CHUNK], tlon[s : s + _ROW_CHUNK], flat, flon)
            idx = kernels.k_smallest(np.round(D, TIE_DECIMALS), k)
            nearest[s : s + _ROW_CHUNK] = idx
            dist[s : s + _ROW_CHUNK] = np.take_along_axis(D, idx, axis=1)
        used = np.unique(nearest)
        slot = {}
        for j in used:
            slot[int(j)] = len(nodes)
            nodes.append(NodeRef(kind, facs[j].id))
            node_coords.append((facs[j].location.lat, facs[j].location.lon))
            node_labels.append(np.nan)
        for t in range(n_t):
            for c in range(nearest.shape[1]):
                edges.append((t, slot[int(nearest[t, c])]))
                weights.append(dist[t, c])
    return UrbanNetwork(nodes, node_coords, node_labels, edges, weights, kind="urban")


def build_proximity_graph(ds: Dataset, kinds=FACILITY_KINDS, k_adj: int = 3) -> UrbanNetwork:
    """Symmetric kNN graph over all tracts and all facilities of ``kinds``."""
    if k_adj < 1:
        raise ValueError("k_adj must be >= 1")
    kinds = _parse_kinds(kinds)
    refs, coords, labels = _tract_arrays(ds)
    for kind in kinds:
        for f in sorted(ds.facilities[kind], key=lambda f: f.id):
            refs.append(NodeRef(kind, f.id))
            coords.append((f.location.lat, f.location.lon))
            labels.append(np.nan)
    n = len(refs)
    if n < 2:
        raise ValueError("a proximity graph needs at least 2 nodes")
    # rows are already in NodeRef order, so index ties resolve by node order
    lat = np.array([c[0] for c in coords])
    lon = np.array([c[1] for c in coords])
    kk = min(k_adj, n - 1)
    pairs = set()
    dist_of = {}
    for s in range(0, n, _ROW_CHUNK):
        D = kernels.haversine_matrix(lat[s : s + _ROW_CHUNK], lon[s : s + _ROW_CHUNK], lat, lon)
        rows = np.arange(D.shape[0])
        D[rows, rows + s] = np.inf
        idx = kernels.k_smallest(np.round(D, TIE_DECIMALS), kk)
        for r in range(D.shape[0]):
            i = r + s
            for j in idx[r]:
                key = (i, int(j)) if i < j else (int(j), i)
                if key not in pairs:
                    pairs.add(key)
                    dist_of[key] = D[r, j]
    keys = sorted(pairs)
    return UrbanNetwork(refs, coords, labels, keys, [dist_of[e] for e in keys], kind="proximity")


def hop_counts(proximity: UrbanNetwork, ds: Dataset) -> HopFeatures:
    """Edges on the shortest unit-cost path from each tract to the nearest facility of each kind."""
    tract_ids = tuple(ds.tract_ids)
    idx = []
    for gid in tract_ids:
        ref = NodeRef(Kind.TRACT, gid)
        if ref not in proximity:
            raise ShapeMismatch(f"tract {gid} is missing from the proximity graph")
        idx.append(proximity.index(ref))
    idx = np.array(idx, dtype=np.int64)
    if len(proximity.nodes_of(Kind.TRACT)) != len(tract_ids):
        raise ShapeMismatch("proximity graph has tracts not in the dataset")
    out = np.full((len(tract_ids), 3), UNREACHABLE, dtype=np.int64)
    for c, kind in enumerate(FACILITY_KINDS):
        sources = proximity.nodes_of(kind)
        if sources.size == 0:
            continue
        d = kernels.bfs_multi_source(proximity.indptr, proximity.indices, sources)
        out[:, c] = d[idx]
    out.setflags(write=False)
    return HopFeatures(tract_ids, out)


def connected_components(net: UrbanNetwork) -> np.ndarray:
    """Component label per node, numbered in order of each component's first node."""
    comp = np.full(len(net), -1, dtype=np.int64)
    label = 0
    for start in range(len(net)):
        if comp[start] >= 0:
            continue
        d = kernels.bfs_multi_source(net.indptr, net.indices, np.array([start]))
        comp[d >= 0] = label
        label += 1
    return comp


def network_stats(net: UrbanNetwork) -> dict:
    kinds = net.kinds()
    deg = net.degrees()
    comp = connected_components(net)
    sizes = np.bincount(comp) if len(comp) else np.zeros(0, dtype=np.int64)
    by_pair = Counter()
    for a, b in net.edges:
        by_pair[f"{net.nodes[a].kind.slug}-{net.nodes[b].kind.slug}"] += 1
    return {
        "n_nodes": len(net),
        "n_edges": net.n_edges,
        "nodes_by_kind": {k.slug: int((kinds == k).sum()) for k in Kind},
        "edges_by_kind_pair": dict(sorted(by_pair.items())),
        "degree_histogram": {int(d): int(c) for d, c in sorted(Counter(deg.tolist()).items())},
        "tract_degree_histogram": {
            int(d): int(c) for d, c in sorted(Counter(deg[kinds == Kind.TRACT].tolist()).items())
        },
        "n_components": int(len(sizes)),
        "component_sizes": sorted((int(s) for s in sizes), reverse=True),
    }


def write_network(net: UrbanNetwork, directory, header: str | None = None, prefix: str = "") -> tuple[str, str]:
    """Write ``<prefix>nodes.csv`` and ``<prefix>edges.csv`` in sorted order."""
    os.makedirs(directory, exist_ok=True)
    npath = os.path.join(directory, f"{prefix}nodes.csv")
    epath = os.path.join(directory, f"{prefix}edges.csv")
    with open_output(npath, header) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("kind", "id", "lat", "lon", "label"))
        for ref, (lat, lon), lab in zip(net.nodes, net.coords, net.labels):
            w.writerow((ref.kind.slug, ref.id, repr(float(lat)), repr(float(lon)), "NA" if np.isnan(lab) else int(lab)))
    with open_output(epath, header) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("src_kind", "src_id", "dst_kind", "dst_id", "weight_km"))
        for (a, b), wt in zip(net.edges, net.weights):
            s, d = net.nodes[a], net.nodes[b]
            w.writerow((s.kind.slug, s.id, d.kind.slug, d.id, repr(float(wt))))
    return npath, epath
