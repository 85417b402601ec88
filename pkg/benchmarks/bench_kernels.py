"""Time the numba and pure-numpy kernel backends on pipeline-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Each kernel is called once untimed (numba compiles or loads its cache), then
the best of ``--repeat`` runs is reported. ``--end-to-end`` additionally trains
one GraphSAGE model in a subprocess per backend, selected through the
URBANGRAPH_PURE_NUMPY environment flag.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from urbangraph.kernels import _jit, _numpy


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def random_csr(rng, n, nnz_per_row):
    rows = np.repeat(np.arange(n), nnz_per_row)
    cols = rng.integers(0, n, rows.size)
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols[order].astype(np.int64), rng.uniform(0.1, 1.0, rows.size)


def cases(rng):
    # sizes follow the default synthetic city: 2000 tracts, ~600 facilities
    lat_a, lon_a = 41.8 + rng.uniform(-0.15, 0.15, (2, 2000))
    lat_b, lon_b = 41.8 + rng.uniform(-0.15, 0.15, (2, 400))
    D = rng.uniform(0, 30, (2000, 400))
    indptr, indices, data = random_csr(rng, 2600, 10)
    H = rng.normal(size=(2600, 16))
    src = rng.choice(2600, 50, replace=False).astype(np.int64)
    v = np.sort(rng.normal(size=1600))
    y = rng.integers(0, 2, 1600)
    X = rng.normal(size=(5000, 8))
    feature = np.array([0, -1, 3, -1, -1])
    threshold = np.array([0.0, np.nan, 0.5, np.nan, np.nan])
    left = np.array([1, -1, 3, -1, -1])
    right = np.array([2, -1, 4, -1, -1])
    return {
        "haversine_matrix 2000x400": lambda be: be.haversine_matrix(lat_a, lon_a, lat_b, lon_b),
        "k_smallest 2000x400 k=2": lambda be: be.k_smallest(D, 2),
        "bfs_multi_source n=2600": lambda be: be.bfs_multi_source(indptr, indices, src),
        "csr_spmm n=2600 d=16": lambda be: be.csr_spmm(indptr, indices, data, H),
        "split_scan n=1600": lambda be: be.split_scan(v, y),
        "tree_apply 5000 rows": lambda be: be.tree_apply(X, feature, threshold, left, right),
    }


TRAIN_SNIPPET = """
import time
from dataclasses import replace
from urbangraph import kernels
from urbangraph.experiment import Workspace, reproduce_grid, run_experiment
from urbangraph.synth import SynthConfig, generate
ds, _ = generate(SynthConfig(seed=0))
row = {(g.table, g.name): g for g in reproduce_grid()}[("graphsage", "all")]
ws = Workspace(ds)
run_experiment(replace(row.config, epochs=2), ds, 1, 0, None, ws)  # warm caches and compiled kernels
t0 = time.perf_counter()
run_experiment(row.config, ds, 1, 0, None, ws)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def end_to_end():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, URBANGRAPH_PURE_NUMPY=flag)
        r = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        name, secs = r.stdout.split()
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true", help="also time one GraphSAGE run per backend")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, call in cases(rng).items():
        tj = best_of(lambda: call(_jit), args.repeat)
        tn = best_of(lambda: call(_numpy), args.repeat)
        print(f"{name:<28}{1e3 * tj:>12.3f}{1e3 * tn:>12.3f}{tn / tj:>9.1f}x")
    if args.end_to_end:
        t = end_to_end()
        print(f"\ngraphsage/all, 1 repeat, 400 epochs: numba {t['numba']:.1f}s  numpy {t['numpy']:.1f}s")


if __name__ == "__main__":
    main()
