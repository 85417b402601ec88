"""Entropy-split decision trees and a bagged random forest (binary labels)."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .evaluation import SingleClass
from .network import ShapeMismatch

FORMAT_VERSION = 1
_MIN_GAIN = 1e-12  # gains at or below this are rounding noise


class EmptyCounts(ValueError):
    pass


def entropy(counts) -> float:
    """Shannon entropy in bits of a class-count vector."""
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or np.any(c < 0):
        raise ValueError("counts must be a 1-d vector of non-negative values")
    total = c.sum()
    if total <= 0:
        raise EmptyCounts("entropy of an empty node")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


def best_split(X, y, features):
    """Best ``(feature, threshold, gain)`` over ``features``, or None if no split gains.

    Thresholds are midpoints between consecutive distinct sorted values. Ties
    go to the lower feature index, then the lower threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    best = None
    for f in sorted(int(j) for j in features):
        order = np.argsort(X[:, f], kind="stable")
        gain, thr = kernels.split_scan(X[order, f], y[order])
        if gain > _MIN_GAIN and (best is None or gain > best[2]):
            best = (f, thr, gain)
    return best


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 10
    criterion: str = "entropy"
    max_depth: int | None = None
    min_samples_split: int = 2
    max_features: str | int | None = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.criterion != "entropy":
            raise ValueError("only the entropy criterion is supported")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")

    def features_per_split(self, m: int) -> int:
        if self.max_features is None:
            return m
        if self.max_features == "sqrt":
            return max(1, int(math.floor(math.sqrt(m))))
        return max(1, min(m, int(self.max_features)))


@dataclass(eq=False)
class DecisionTree:
    """Flat tree; ``left[i] == -1`` marks a leaf. ``counts[i]`` = (n_class0, n_class1)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    n_features: int

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True)
            for k in ("feature", "threshold", "left", "right", "counts")
        )

    __hash__ = None

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def apply(self, X) -> np.ndarray:
        return kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeMismatch(f"tree expects {self.n_features} columns")
        leaf = self.apply(X)
        c = self.counts[leaf]
        return c[:, 1] / c.sum(axis=1)


def fit_tree(X, y, config: ForestConfig, rng: np.random.Generator) -> DecisionTree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    n, m = X.shape
    k = config.features_per_split(m)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        pos = int(y[rows].sum())
        counts.append((len(rows) - pos, pos))
        return len(left) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        n0, n1 = counts[node]
        if n0 == 0 or n1 == 0 or len(rows) < config.min_samples_split:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        cand = np.sort(rng.choice(m, k, replace=False)) if k < m else np.arange(m)
        split = best_split(X[rows], y[rows], cand)
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, 2),
        m,
    )


def tree_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """One independent generator per tree index, derived from the master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence([int(seed), 0x7EE]).spawn(n)]


@dataclass(eq=False)
class Forest:
    config: ForestConfig
    trees: list
    oob_score: float = float("nan")
    columns: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return self.config == other.config and self.trees == other.trees

    __hash__ = None


def fit_forest(config: ForestConfig, X, y, columns=()) -> Forest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClass("random forest needs both classes in y")
    n = len(y)
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for rng in tree_rngs(config.seed, config.n_estimators):
        if config.bootstrap:
            rows = rng.integers(0, n, n)
        else:
            rows = np.arange(n)
        tree = fit_tree(X[rows], y[rows], config, rng)
        trees.append(tree)
        if config.bootstrap:
            out = np.ones(n, dtype=bool)
            out[rows] = False
            if out.any():
                oob_sum[out] += tree.predict_proba(X[out])
                oob_cnt[out] += 1
    seen = oob_cnt > 0
    oob = float(np.mean((oob_sum[seen] / oob_cnt[seen] >= 0.5) == y[seen])) if seen.any() else float("nan")
    return Forest(config, trees, oob, tuple(columns))


def predict_proba(forest: Forest, X) -> np.ndarray:
    """Mean over trees of the leaf class-1 fraction."""
    X = np.asarray(X, dtype=np.float64)
    m = forest.trees[0].n_features
    if X.ndim != 2 or X.shape[1] != m:
        raise ShapeMismatch(f"forest expects {m} columns, got {X.shape}")
    total = np.zeros(X.shape[0])
    for t in forest.trees:
        total += t.predict_proba(X)
    return total / len(forest.trees)


def save_forest(forest: Forest, path):
    meta = {
        "format": "urbangraph-forest",
        "version": FORMAT_VERSION,
        "config": asdict(forest.config),
        "columns": list(forest.columns),
        "oob_score": forest.oob_score,
        "n_features": forest.trees[0].n_features,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, t in enumerate(forest.trees):
        for k in ("feature", "threshold", "left", "right", "counts"):
            arrays[f"t{i}_{k}"] = getattr(t, k)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_forest(path, columns=None) -> Forest:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "urbangraph-forest" or meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path} is not a supported saved forest")
        cfg = ForestConfig(**meta["config"])
        trees = [
            DecisionTree(*(z[f"t{i}_{k}"].copy() for k in ("feature", "threshold", "left", "right", "counts")), meta["n_features"])
            for i in range(cfg.n_estimators)
        ]
    if columns is not None and tuple(columns) != tuple(meta["columns"]):
        raise ShapeMismatch("feature columns differ from the ones the forest was trained on")
    return Forest(cfg, trees, meta["oob_score"], tuple(meta["columns"]))
