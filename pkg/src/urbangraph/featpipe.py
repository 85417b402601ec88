"""Node attribute assembly and L1-based socioeconomic feature selection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._io import open_output
from .evaluation import auc, kfold
from .ingest import FOOTPRINT_COLUMNS, Dataset, Kind
from .network import HOP_COLUMNS, UNREACHABLE, HopFeatures, NodeRef, ShapeMismatch, UrbanNetwork

ONEHOT_COLUMNS = ("kind_tract", "kind_school", "kind_hospital", "kind_subway")
DEGREE_COLUMN = "degree_norm"
GROUPS = ("onehot", "socio", "footprint", "hops", "degree")
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 1, 20))


class NonFinite(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool, zero training variance

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Z = (X - self.mean) / np.where(self.constant, 1.0, self.std)
        Z[:, self.constant] = 0.0
        return Z


def fit_stats(X) -> ColumnStats:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # relative test so that rescaling a constant column keeps it constant
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return ColumnStats(mean, std, constant)


def standardize(X, train_rows) -> tuple[np.ndarray, ColumnStats]:
    """Z-score every row with population mean/std taken from ``train_rows`` only."""
    X = np.asarray(X, dtype=np.float64)
    stats = fit_stats(X[train_rows])
    return stats.apply(X), stats


# L1-penalised logistic regression -------------------------------------------


@dataclass
class L1Fit:
    coef: np.ndarray
    intercept: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def logistic_loss(X, y, w, b) -> float:
    z = X @ w + b
    # log(1 + exp(z)) - y z, written stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _grad(X, y, w, b):
    z = X @ w + b
    r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
    return X.T @ r / len(y), float(r.mean()), float(np.mean(np.logaddexp(0.0, z) - y * z))


def l1_logreg(X, y, lam: float, max_iter: int = 5000, tol: float = 1e-10, w0=None, b0=None) -> L1Fit:
    """Minimise mean logistic loss + lam * ||w||_1 by proximal gradient.

    The step size adapts (grows by 1.25 each iteration, halves on a failed
    sufficient-decrease test), so the objective never increases. The
    intercept is not penalised.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n, m = X.shape
    w = np.zeros(m) if w0 is None else np.array(w0, dtype=np.float64)
    b = 0.0 if b0 is None else float(b0)
    # 1/L with L the Lipschitz bound of the smooth part
    L = 0.25 * (np.linalg.norm(X, 2) ** 2 / n + 1.0) if m else 0.25
    step = 1.0 / L
    gw, gb, f = _grad(X, y, w, b)
    obj = f + lam * np.abs(w).sum()
    hist = [obj]
    fit = L1Fit(w, b, hist)
    for it in range(1, max_iter + 1):
        step *= 1.25
        while True:
            w_new = soft_threshold(w - step * gw, step * lam)
            b_new = b - step * gb
            dw, db = w_new - w, b_new - b
            f_new = logistic_loss(X, y, w_new, b_new)
            if not np.isfinite(f_new):
                raise NonFinite(f"objective became non-finite at iteration {it}")
            bound = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step)
            if f_new <= bound + 1e-15 * abs(f) or step < 1e-12:
                break
            step *= 0.5
        w, b = w_new, b_new
        gw, gb, f = _grad(X, y, w, b)
        new_obj = f + lam * np.abs(w).sum()
        if not np.isfinite(new_obj):
            raise NonFinite(f"objective became non-finite at iteration {it}")
        hist.append(new_obj)
        fit.n_iter = it
        if abs(obj - new_obj) <= tol * max(1.0, abs(obj)):
            fit.converged = True
            obj = new_obj
            break
        obj = new_obj
    fit.coef, fit.intercept = w, b
    return fit


def predict_logreg(fit: L1Fit, X) -> np.ndarray:
    z = np.asarray(X, dtype=np.float64) @ fit.coef + fit.intercept
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lambda_path(X, y, lambdas: Sequence[float], **kw) -> list[L1Fit]:
    """Fits for each lambda (returned in input order), warm-started from large to small."""
    order = sorted(range(len(lambdas)), key=lambda i: -lambdas[i])
    out = [None] * len(lambdas)
    w, b = None, None
    for i in order:
        fit = l1_logreg(X, y, lambdas[i], w0=w, b0=b, **kw)
        w, b = fit.coef, fit.intercept
        out[i] = fit
    return out


# selection ------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureScore:
    name: str
    coefficient: float
    abs_rank: int
    selected: bool
    pruned: bool


@dataclass(frozen=True, eq=False)
class SelectionReport:
    features: tuple[FeatureScore, ...]  # ordered by abs_rank
    names: tuple[str, ...]  # final selection, in original column order
    lam: float
    cv_auc: dict
    stats: ColumnStats  # training stats over all candidate columns
    columns: tuple[str, ...]

    @property
    def indices(self) -> list[int]:
        pos = {c: i for i, c in enumerate(self.columns)}
        return [pos[n] for n in self.names]


def _cv_auc(Z, y, folds, lambdas, n_folds):
    scores = np.zeros((n_folds, len(lambdas)))
    for f in range(n_folds):
        tr, va = folds != f, folds == f
        fits = lambda_path(Z[tr], y[tr], lambdas)
        for j, fit in enumerate(fits):
            scores[f, j] = auc(Z[va] @ fit.coef + fit.intercept, y[va])
    return scores


def prune_correlated(Z, coef, candidates, threshold):
    """Greedy pruning by descending |coef|; ties keep the earlier column."""
    order = sorted(candidates, key=lambda j: (-abs(coef[j]), j))
    kept, pruned = [], []
    for j in order:
        if any(abs(_pearson(Z[:, j], Z[:, k])) > threshold for k in kept):
            pruned.append(j)
        else:
            kept.append(j)
    return sorted(kept), sorted(pruned)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else 0.0


def select_features(
    X,
    y,
    ids: Sequence[str],
    names: Sequence[str],
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    corr_threshold: float = 0.8,
    n_folds: int = 5,
    seed: int = 0,
    rule: str = "1se",
) -> SelectionReport:
    """Choose lambda by stratified k-fold CV AUC, keep non-zero coefficients, prune collinear pairs.

    ``rule="1se"`` picks the largest lambda whose mean CV AUC is within one
    standard error of the best; ``rule="max"`` takes the best mean directly.
    Fold membership depends only on the ids and seed, not on row order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    names = tuple(names)
    if X.shape[1] < 2:
        raise ValueError("need at least 2 candidate features")
    if X.shape[0] < 10:
        raise ValueError("need at least 10 labeled rows")
    Z, stats = standardize(X, slice(None))
    lambdas = [float(v) for v in lambda_grid]
    if len(lambdas) == 1:
        lam = lambdas[0]
        cv = {}
    else:
        fold_of = kfold(ids, y.astype(int), n_folds, seed)
        folds = np.array([fold_of[i] for i in ids])
        scores = _cv_auc(Z, y, folds, lambdas, n_folds)
        mean = scores.mean(axis=0)
        cv = {lam_: float(s) for lam_, s in zip(lambdas, mean)}
        best = int(np.argmax(mean))
        if rule == "1se":
            se = scores[:, best].std(ddof=1) / np.sqrt(n_folds)
            ok = [j for j in range(len(lambdas)) if mean[j] >= mean[best] - se]
            lam = max(lambdas[j] for j in ok)
        elif rule == "max":
            lam = lambdas[best]
        else:
            raise ValueError(f"unknown rule {rule!r}")
    path = sorted({v for v in lambdas if v >= lam}, reverse=True)
    fit = lambda_path(Z, y, path)[-1]
    coef = fit.coef
    nonzero = [j for j in range(len(names)) if coef[j] != 0.0]
    kept, pruned = prune_correlated(Z, coef, nonzero, corr_threshold)
    pruned_set = set(pruned)
    rank_order = sorted(range(len(names)), key=lambda j: (-abs(coef[j]), j))
    feats = tuple(
        FeatureScore(names[j], float(coef[j]), r + 1, coef[j] != 0.0, j in pruned_set)
        for r, j in enumerate(rank_order)
    )
    return SelectionReport(feats, tuple(names[j] for j in kept), lam, cv, stats, names)


def write_selection(report: SelectionReport, path, header: str | None = None):
    with open_output(path, header) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("feature", "coefficient", "abs_rank", "selected", "pruned"))
        for f in report.features:
            w.writerow((f.name, repr(f.coefficient), f.abs_rank, int(f.selected), int(f.pruned)))


# assembly -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: tuple[NodeRef, ...]
    columns: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ShapeMismatch(f"values {self.values.shape} vs {len(self.rows)}x{len(self.columns)}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature matrix has non-finite entries")

    def write_csv(self, path, header: str | None = None):
        with open_output(path, header) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("kind", "id") + self.columns)
            for ref, row in zip(self.rows, self.values):
                w.writerow([ref.kind.slug, ref.id] + [repr(float(v)) for v in row])


def _parse_groups(include: Iterable[str]) -> tuple[str, ...]:
    inc = set(include)
    bad = inc - set(GROUPS)
    if bad:
        raise ValueError(f"unknown feature groups {sorted(bad)}; choose from {GROUPS}")
    return tuple(g for g in GROUPS if g in inc)


def assemble_features(
    net: UrbanNetwork,
    ds: Dataset,
    selection: SelectionReport | None = None,
    hops: HopFeatures | None = None,
    include: Iterable[str] = ("onehot", "socio", "footprint", "hops"),
    train_ids: Iterable[str] | None = None,
) -> FeatureMatrix:
    """Per-node attribute matrix over ``net.nodes``.

    Column blocks, in this order when included:
      onehot     kind_tract, kind_school, kind_hospital, kind_subway
      socio      selected socio columns, z-scored with the selection's training stats
      footprint  log1p of the four footprint statistics, z-scored on training tracts
      hops       hop counts, unreachable -> (largest reachable + 1), z-scored on training tracts
      degree     node degree / maximum degree in ``net``
    Facility rows are zero outside the onehot and degree blocks.
    """
    groups = _parse_groups(include)
    n = len(net)
    tindex = ds.tract_index()
    rows_t = [i for i, r in enumerate(net.nodes) if r.kind == Kind.TRACT]
    ds_rows = [tindex[net.nodes[i].id] for i in rows_t]
    if len(rows_t) != len(ds.tracts):
        raise ShapeMismatch("network tracts do not match the dataset")
    if train_ids is None:
        train_ids = ds.labeled_ids()
    train_set = set(train_ids)
    train_local = np.array([net.nodes[i].id in train_set for i in rows_t], dtype=bool)
    if not train_local.any():
        train_local[:] = True

    blocks, cols = [], []
    if "onehot" in groups:
        B = np.zeros((n, 4))
        B[np.arange(n), net.kinds()] = 1.0
        blocks.append(B)
        cols += ONEHOT_COLUMNS
    if "socio" in groups:
        if selection is None:
            raise ValueError("socio group requested without a selection")
        idx = selection.indices
        B = np.zeros((n, len(idx)))
        if idx:
            B[rows_t] = selection.stats.apply(ds.socio[ds_rows])[:, idx]
        blocks.append(B)
        cols += list(selection.names)
    if "footprint" in groups:
        raw = np.log1p(ds.footprints[ds_rows])
        B = np.zeros((n, 4))
        B[rows_t] = fit_stats(raw[train_local]).apply(raw)
        blocks.append(B)
        cols += FOOTPRINT_COLUMNS
    if "hops" in groups:
        if hops is None:
            raise ValueError("hops group requested without hop features")
        if set(hops.tract_ids) != set(tindex) or len(hops.tract_ids) != len(rows_t):
            raise ShapeMismatch("hop features and network cover different tracts")
        hpos = {t: i for i, t in enumerate(hops.tract_ids)}
        raw = hops.values[[hpos[net.nodes[i].id] for i in rows_t]].astype(np.float64)
        for c in range(raw.shape[1]):
            col = raw[:, c]
            reach = col != UNREACHABLE
            col[~reach] = (col[reach].max() + 1.0) if reach.any() else 0.0
        B = np.zeros((n, len(HOP_COLUMNS)))
        B[rows_t] = fit_stats(raw[train_local]).apply(raw)
        blocks.append(B)
        cols += HOP_COLUMNS
    if "degree" in groups:
        deg = net.degrees().astype(np.float64)
        top = deg.max() if n and deg.max() > 0 else 1.0
        blocks.append((deg / top)[:, None])
        cols.append(DEGREE_COLUMN)
    values = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return FeatureMatrix(net.nodes, tuple(cols), values)
