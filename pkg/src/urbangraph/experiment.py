"""Repeated train/test experiments and the comparison grid behind ``reproduce``."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import featpipe, forest, nn
from ._io import open_output
from .evaluation import EvalReport, auc, repeat_seed, roc_points, score_predictions, split_80_20
from .ingest import FACILITY_KINDS, Dataset, Kind
from .network import NodeRef, build_proximity_graph, build_urban_network, hop_counts

log = logging.getLogger(__name__)

MODELS = ("graphsage", "gcn", "rf", "logreg")
STRUCTURE_GROUPS = ("onehot", "degree")
ALL_GROUPS = ("onehot", "socio", "footprint", "hops")


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "graphsage"
    facilities: tuple = ("school", "hospital", "subway")
    feature_groups: tuple = ALL_GROUPS
    k: int = 2
    k_adj: int = 3
    # GNN
    layer_dims: tuple = (16, 4, 2)
    epochs: int = 400
    batch_size: int = 150
    learning_rate: float = 0.001
    edge_weight_mode: str = "binary"
    # feature selection
    lambda_grid: tuple = featpipe.DEFAULT_LAMBDA_GRID
    corr_threshold: float = 0.8
    n_folds: int = 5
    selection_rule: str = "1se"
    # forest
    n_estimators: int = 10
    max_depth: int | None = None
    # metrics
    threshold: float = 0.5

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        kinds = tuple(Kind.parse(f).slug for f in self.facilities)
        if not kinds:
            raise ValueError("at least one facility kind is required")
        object.__setattr__(self, "facilities", tuple(sorted(set(kinds), key=lambda s: Kind.parse(s))))
        object.__setattr__(self, "feature_groups", featpipe._parse_groups(self.feature_groups))
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if not self.feature_groups and self.model in ("graphsage", "gcn"):
            raise ValueError("GNN models need at least one feature group")

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(Kind.parse(f) for f in self.facilities)

    def needs_selection(self) -> bool:
        return self.model in ("rf", "logreg") or "socio" in self.feature_groups

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda_grid"] = [float(v) for v in self.lambda_grid]
        return d


class Workspace:
    """Memo of per-dataset artifacts shared across repeats and grid rows.

    Networks and hop counts depend only on the dataset and facility choice;
    feature selections depend on the training split and selection settings.
    """

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._cache = {}

    def _get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def network(self, kinds, k):
        return self._get(("net", kinds, k), lambda: build_urban_network(self.ds, kinds, k))

    def hops(self, kinds, k_adj):
        return self._get(("hops", kinds, k_adj), lambda: hop_counts(build_proximity_graph(self.ds, kinds, k_adj), self.ds))

    def selection(self, cfg: PipelineConfig, seed: int, train_ids):
        key = ("sel", seed, tuple(train_ids), cfg.lambda_grid, cfg.corr_threshold, cfg.n_folds, cfg.selection_rule)

        def make():
            idx = self.ds.tract_index()
            rows = [idx[t] for t in train_ids]
            y = self.ds.labels[rows]
            return featpipe.select_features(
                self.ds.socio[rows],
                y,
                list(train_ids),
                self.ds.socio_names,
                cfg.lambda_grid,
                cfg.corr_threshold,
                cfg.n_folds,
                seed,
                cfg.selection_rule,
            )

        return self._get(key, make)


def _socio_block(ds: Dataset, sel: featpipe.SelectionReport, ids):
    idx = ds.tract_index()
    Z = sel.stats.apply(ds.socio[[idx[t] for t in ids]])
    return Z[:, sel.indices]


def _run_gnn(cfg, ws: Workspace, seed, train_ids, test_ids):
    ds = ws.ds
    net = ws.network(cfg.kinds, cfg.k)
    sel = ws.selection(cfg, seed, train_ids) if "socio" in cfg.feature_groups else None
    hops = ws.hops(cfg.kinds, cfg.k_adj) if "hops" in cfg.feature_groups else None
    X = featpipe.assemble_features(net, ds, sel, hops, cfg.feature_groups, train_ids)
    lab = {t: v for t, v in zip(ds.tract_ids, ds.labels) if not np.isnan(v)}
    labels = np.full(len(net), np.nan)
    mask = np.zeros(len(net), dtype=bool)
    train_set = set(train_ids)
    for i, ref in enumerate(net.nodes):
        if ref.kind == Kind.TRACT and ref.id in lab:
            labels[i] = lab[ref.id]
            mask[i] = ref.id in train_set
    gcfg = nn.GnnConfig(
        arch=cfg.model,
        layer_dims=cfg.layer_dims,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=seed,
        edge_weight_mode=cfg.edge_weight_mode,
    )
    model = nn.train_gnn(gcfg, net, X, labels, mask)
    prob = nn.predict(model, net, X)
    return prob[[net.index(NodeRef(Kind.TRACT, t)) for t in test_ids]]


def _run_tabular(cfg, ws: Workspace, seed, train_ids, test_ids):
    ds = ws.ds
    sel = ws.selection(cfg, seed, train_ids)
    if not sel.names:
        # nothing survived selection: score everything by the training prevalence
        idx = ds.tract_index()
        return np.full(len(test_ids), float(np.mean(ds.labels[[idx[t] for t in train_ids]])))
    idx = ds.tract_index()
    Xtr, Xte = _socio_block(ds, sel, train_ids), _socio_block(ds, sel, test_ids)
    ytr = ds.labels[[idx[t] for t in train_ids]]
    if cfg.model == "rf":
        fcfg = forest.ForestConfig(n_estimators=cfg.n_estimators, max_depth=cfg.max_depth, seed=seed)
        f = forest.fit_forest(fcfg, Xtr, ytr, sel.names)
        return forest.predict_proba(f, Xte)
    fit = featpipe.l1_logreg(Xtr, ytr, sel.lam)
    return featpipe.predict_logreg(fit, Xte)


def run_experiment(
    config: PipelineConfig,
    dataset: Dataset,
    repeats: int = 10,
    seed: int = 0,
    oracle_scores: dict | None = None,
    workspace: Workspace | None = None,
) -> EvalReport:
    """Repeat split -> select -> fit -> score ``repeats`` times with derived seeds.

    ``oracle_scores`` maps tract id to a reference score (e.g. synthetic true
    log-odds); its AUC on each repeat's test ids is stored as the ceiling.
    The ROC curve kept in the report is the first repeat's.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    ws = workspace if workspace is not None and workspace.ds is dataset else Workspace(dataset)
    ids = dataset.labeled_ids()
    idx = dataset.tract_index()
    y_all = np.array([dataset.labels[idx[t]] for t in ids]).astype(np.int64)
    results, ceiling, roc = [], [], []
    for r in range(repeats):
        s = repeat_seed(seed, r)
        train_ids, test_ids = split_80_20(ids, y_all, s)
        if config.model in ("graphsage", "gcn"):
            scores = _run_gnn(config, ws, s, train_ids, test_ids)
        else:
            scores = _run_tabular(config, ws, s, train_ids, test_ids)
        y_test = dataset.labels[[idx[t] for t in test_ids]].astype(np.int64)
        m = score_predictions(scores, y_test, config.threshold)
        results.append(m)
        if r == 0:
            roc = roc_points(scores, y_test)
        if oracle_scores is not None:
            ceiling.append(auc(np.array([oracle_scores[t] for t in test_ids]), y_test))
        log.info("%s repeat %d/%d auc=%.4f", config.model, r + 1, repeats, m.auc)
    cfg = config.as_dict()
    cfg.update(repeats=repeats, seed=seed)
    return EvalReport(cfg, results, roc, ceiling)


# reproduce grid ---------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    table: str
    name: str
    config: PipelineConfig


def reproduce_grid(base: PipelineConfig | None = None, gcn_edge_weight_mode: str = "inverse_distance") -> list[GridRow]:
    """GraphSAGE feature subsets, GCN per facility network, RF on socio features.

    The GCN rows see only structure (node kind and degree), so by default they
    propagate over distance-weighted edges.
    """
    base = base or PipelineConfig()
    all_fac = tuple(k.slug for k in FACILITY_KINDS)
    rows = []
    sage = {
        "structure": STRUCTURE_GROUPS,
        "footprint": ("onehot", "footprint"),
        "hops": ("onehot", "hops"),
        "socio": ("onehot", "socio"),
        "all": ALL_GROUPS,
    }
    for name, groups in sage.items():
        rows.append(GridRow("graphsage", name, replace(base, model="graphsage", facilities=all_fac, feature_groups=groups)))
    for name, fac in (("school", ("school",)), ("hospital", ("hospital",)), ("subway", ("subway",)), ("all", all_fac)):
        cfg = replace(
            base, model="gcn", facilities=fac, feature_groups=STRUCTURE_GROUPS, edge_weight_mode=gcn_edge_weight_mode
        )
        rows.append(GridRow("gcn", name, cfg))
    rows.append(GridRow("rf", "socio", replace(base, model="rf", facilities=all_fac, feature_groups=("socio",))))
    return rows


TABLE_COLUMNS = (
    "table",
    "row",
    "model",
    "facilities",
    "features",
    "auc_mean",
    "auc_std",
    "precision_w",
    "recall_w",
    "f1_w",
    "precision",
    "recall",
    "f1",
)


def comparison_rows(results: list[tuple[GridRow, EvalReport]]) -> list[dict]:
    out = []
    for row, rep in results:
        mean, std = rep.mean, rep.std
        out.append(
            {
                "table": row.table,
                "row": row.name,
                "model": row.config.model,
                "facilities": "+".join(row.config.facilities),
                "features": "+".join(row.config.feature_groups),
                "auc_mean": mean["auc"],
                "auc_std": std["auc"],
                "precision_w": mean["precision_weighted"],
                "recall_w": mean["recall_weighted"],
                "f1_w": mean["f1_weighted"],
                "precision": mean["precision"],
                "recall": mean["recall"],
                "f1": mean["f1"],
            }
        )
    return out


def write_comparison(rows: list[dict], path, header: str | None = None):
    with open_output(path, header) as fh:
        fh.write("\t".join(TABLE_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in TABLE_COLUMNS) + "\n")
