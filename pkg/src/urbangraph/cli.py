"""``urbangraph`` command line: synth, build-graph, features, train, evaluate, reproduce."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__, featpipe, forest, kernels, nn
from ._io import make_header, open_output
from .evaluation import repeat_seed, roc_svg, split_80_20, write_report, write_roc_csv
from .experiment import (
    ALL_GROUPS,
    MODELS,
    PipelineConfig,
    Workspace,
    comparison_rows,
    reproduce_grid,
    run_experiment,
    write_comparison,
)
from .ingest import FACILITY_KINDS, IngestError, Kind, load_dataset, write_dataset
from .network import NodeRef, build_proximity_graph, build_urban_network, hop_counts, network_stats, write_network
from .synth import SynthConfig, generate

log = logging.getLogger("urbangraph")


class ConfigError(ValueError):
    pass


# key -> (default, description). Synthetic-data keys are prefixed "synth.".
RUN_KEYS = {
    "data": (None, "dataset directory (reproduce synthesizes one when unset)"),
    "out": ("out", "output directory"),
    "seed": (0, "master seed"),
    "model": ("graphsage", "graphsage | gcn | rf | logreg"),
    "k": (2, "nearest facilities per kind linked to each tract (1..10)"),
    "k_adj": (3, "neighbours per node in the proximity graph used for hop counts"),
    "facilities": ("school,hospital,subway", "facility kinds in the urban network"),
    "feature_groups": (",".join(ALL_GROUPS), "node feature blocks: onehot,socio,footprint,hops,degree"),
    "repeats": (10, "train/test repeats in evaluate and reproduce"),
    "epochs": (400, "GNN training epochs"),
    "batch_size": (150, "GNN loss-mask minibatch size"),
    "learning_rate": (0.001, "GNN Adam learning rate"),
    "layer_dims": ("16,4,2", "GNN layer output widths"),
    "edge_weight_mode": ("binary", "GNN adjacency: binary | inverse_distance"),
    "gcn_edge_weight_mode": ("inverse_distance", "adjacency for the GCN rows of reproduce"),
    "n_folds": (5, "cross-validation folds for lambda selection"),
    "corr_threshold": (0.8, "|pearson| above which a weaker selected feature is pruned"),
    "selection_rule": ("1se", "lambda rule: 1se | max"),
    "lambda_grid": ("logspace(-4,1,20)", "L1 strengths tried by cross-validation (comma list)"),
    "n_estimators": (10, "random forest trees"),
    "max_depth": (None, "random forest depth limit (none = unlimited)"),
    "threshold": (0.5, "probability threshold for precision/recall/F1"),
    "threads": (1, "worker cap for compiled kernels"),
}
SYNTH_KEYS = {f"synth.{f.name}": (f.default, "synthetic generator") for f in fields(SynthConfig) if f.name != "seed"}
ALL_KEYS = {**RUN_KEYS, **SYNTH_KEYS}


def _coerce(key, value, default):
    if value is None:
        return None
    text = str(value).strip()
    if text.lower() in ("none", "") and default is None:
        return None
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int) or key in ("max_depth",):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def read_config_file(path) -> dict:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in ALL_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {k!r}")
            out[k] = v
    return out


def resolve_config(args) -> dict:
    """Defaults, then the config file, then ``--set`` pairs, then explicit flags."""
    raw = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for pair in args.set or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        k, v = (s.strip() for s in pair.split("=", 1))
        if k not in ALL_KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        raw[k] = v
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    cfg = {}
    for k, (default, _) in ALL_KEYS.items():
        cfg[k] = _coerce(k, raw[k], default) if k in raw else default
    if not 1 <= cfg["k"] <= 10:
        raise ConfigError(f"k must be in 1..10, got {cfg['k']}")
    if cfg["model"] not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {cfg['model']!r}")
    if cfg["repeats"] < 1:
        raise ConfigError("repeats must be >= 1")
    return cfg


def _csv_list(text):
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _lambda_grid(text):
    if text == RUN_KEYS["lambda_grid"][0]:
        return featpipe.DEFAULT_LAMBDA_GRID
    try:
        return tuple(float(v) for v in _csv_list(text))
    except ValueError:
        raise ConfigError(f"bad lambda_grid {text!r}") from None


def pipeline_config(cfg: dict, **overrides) -> PipelineConfig:
    kw = dict(
        model=cfg["model"],
        facilities=_csv_list(cfg["facilities"]),
        feature_groups=_csv_list(cfg["feature_groups"]),
        k=cfg["k"],
        k_adj=cfg["k_adj"],
        layer_dims=tuple(int(v) for v in _csv_list(cfg["layer_dims"])),
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        edge_weight_mode=cfg["edge_weight_mode"],
        lambda_grid=_lambda_grid(cfg["lambda_grid"]),
        corr_threshold=cfg["corr_threshold"],
        n_folds=cfg["n_folds"],
        selection_rule=cfg["selection_rule"],
        n_estimators=cfg["n_estimators"],
        max_depth=cfg["max_depth"],
        threshold=cfg["threshold"],
    )
    kw.update(overrides)
    try:
        return PipelineConfig(**kw)
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e)) from None


def synth_config(cfg: dict) -> SynthConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("synth.")}
    try:
        return SynthConfig(seed=cfg["seed"], **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _header(cfg, title):
    return make_header(cfg, title)


def _require_data(cfg):
    if not cfg["data"]:
        raise ConfigError("this command needs --data <dataset dir>")
    return load_dataset(cfg["data"])


def _read_truth(directory):
    path = os.path.join(directory, "truth.csv")
    if not os.path.exists(path):
        return None
    out = {}
    with open(path, encoding="utf-8") as fh:
        rows = (line for line in fh if not line.startswith("#"))
        for row in csv.DictReader(rows):
            out[row["tract_id"]] = float(row["log_odds"])
    return out


# commands --------------------------------------------------------------------


def cmd_synth(cfg):
    scfg = synth_config(cfg)
    ds, gt = generate(scfg)
    out = os.path.join(cfg["out"], "data") if not cfg["data"] else cfg["data"]
    header = _header(cfg, "synth")
    paths = write_dataset(ds, out, header)
    truth = os.path.join(out, "truth.csv")
    inf = ",".join(ds.socio_names[j] for j in gt.informative)
    with open_output(truth, header + f"\ninformative={inf}\nintercept={float(gt.intercept)!r}") as fh:
        fh.write("tract_id,log_odds,clean_label\n")
        for tid, lo, cl in zip(gt.tract_ids, gt.log_odds, gt.clean_labels):
            fh.write(f"{tid},{float(lo)!r},{int(cl)}\n")
    log.info("wrote %d files to %s", len(paths) + 1, out)
    return 0


def cmd_build_graph(cfg):
    ds = _require_data(cfg)
    kinds = [Kind.parse(f) for f in _csv_list(cfg["facilities"])]
    header = _header(cfg, "build-graph")
    net = build_urban_network(ds, kinds, cfg["k"])
    write_network(net, cfg["out"], header)
    prox = build_proximity_graph(ds, kinds, cfg["k_adj"])
    hops = hop_counts(prox, ds)
    with open_output(os.path.join(cfg["out"], "hops.csv"), header) as fh:
        fh.write("tract_id," + ",".join(hops.columns) + "\n")
        for tid, row in zip(hops.tract_ids, hops.values):
            fh.write(tid + "," + ",".join(str(int(v)) for v in row) + "\n")
    stats = {"urban": network_stats(net), "proximity": network_stats(prox)}
    with open_output(os.path.join(cfg["out"], "stats.json"), header) as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"nodes={len(net)} edges={net.n_edges}")
    return 0


def _train_split(ds, seed):
    ids = ds.labeled_ids()
    idx = ds.tract_index()
    y = ds.labels[[idx[t] for t in ids]].astype(np.int64)
    return split_80_20(ids, y, repeat_seed(seed, 0))


def cmd_features(cfg):
    ds = _require_data(cfg)
    pc = pipeline_config(cfg)
    train_ids, _ = _train_split(ds, cfg["seed"])
    ws = Workspace(ds)
    header = _header(cfg, "features")
    sel = ws.selection(pc, repeat_seed(cfg["seed"], 0), train_ids)
    featpipe.write_selection(sel, os.path.join(cfg["out"], "selection.csv"), header)
    net = ws.network(pc.kinds, pc.k)
    hops = ws.hops(pc.kinds, pc.k_adj) if "hops" in pc.feature_groups else None
    X = featpipe.assemble_features(net, ds, sel, hops, pc.feature_groups, train_ids)
    X.write_csv(os.path.join(cfg["out"], "features.csv"), header)
    print(f"selected {len(sel.names)} of {len(sel.columns)} socio features (lambda={sel.lam:.4g})")
    return 0


def cmd_train(cfg):
    ds = _require_data(cfg)
    pc = pipeline_config(cfg)
    seed = repeat_seed(cfg["seed"], 0)
    train_ids, _ = _train_split(ds, cfg["seed"])
    ws = Workspace(ds)
    header = _header(cfg, "train")
    os.makedirs(cfg["out"], exist_ok=True)
    if pc.model in ("graphsage", "gcn"):
        net = ws.network(pc.kinds, pc.k)
        sel = ws.selection(pc, seed, train_ids) if "socio" in pc.feature_groups else None
        hops = ws.hops(pc.kinds, pc.k_adj) if "hops" in pc.feature_groups else None
        X = featpipe.assemble_features(net, ds, sel, hops, pc.feature_groups, train_ids)
        labels = np.full(len(net), np.nan)
        mask = np.zeros(len(net), dtype=bool)
        lab = {t: v for t, v in zip(ds.tract_ids, ds.labels) if not np.isnan(v)}
        for t in lab:
            labels[net.index(NodeRef(Kind.TRACT, t))] = lab[t]
        for t in train_ids:
            mask[net.index(NodeRef(Kind.TRACT, t))] = True
        gcfg = nn.GnnConfig(
            arch=pc.model,
            layer_dims=pc.layer_dims,
            epochs=pc.epochs,
            batch_size=pc.batch_size,
            learning_rate=pc.learning_rate,
            seed=seed,
            edge_weight_mode=pc.edge_weight_mode,
        )
        t0 = time.perf_counter()
        model = nn.train_gnn(gcfg, net, X, labels, mask, callback=_epoch_logger(pc.epochs))
        log.info("trained %s in %.1fs", pc.model, time.perf_counter() - t0)
        nn.save_model(model, os.path.join(cfg["out"], "model.npz"))
        with open_output(os.path.join(cfg["out"], "train_log.csv"), header) as fh:
            fh.write("epoch,loss\n")
            for e, loss in enumerate(model.loss_history):
                fh.write(f"{e},{loss!r}\n")
        print(f"final loss {model.loss_history[-1]:.4f}")
        return 0
    sel = ws.selection(pc, seed, train_ids)
    idx = ds.tract_index()
    rows = [idx[t] for t in train_ids]
    X = sel.stats.apply(ds.socio[rows])[:, sel.indices]
    y = ds.labels[rows]
    if pc.model == "rf":
        f = forest.fit_forest(forest.ForestConfig(pc.n_estimators, max_depth=pc.max_depth, seed=seed), X, y, sel.names)
        forest.save_forest(f, os.path.join(cfg["out"], "model.npz"))
        summary = {"model": "rf", "oob_accuracy": f.oob_score, "features": list(sel.names)}
    else:
        fit = featpipe.l1_logreg(X, y, sel.lam)
        summary = {
            "model": "logreg",
            "lambda": sel.lam,
            "intercept": fit.intercept,
            "coefficients": dict(zip(sel.names, map(float, fit.coef))),
            "iterations": fit.n_iter,
        }
    with open_output(os.path.join(cfg["out"], "train_log.json"), header) as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _epoch_logger(total):
    step = max(1, total // 10)

    def cb(epoch, loss):
        if (epoch + 1) % step == 0 or epoch + 1 == total:
            log.info("epoch %d/%d loss %.4f", epoch + 1, total, loss)

    return cb


def cmd_evaluate(cfg):
    ds = _require_data(cfg)
    pc = pipeline_config(cfg)
    truth = _read_truth(cfg["data"])
    header = _header(cfg, "evaluate")
    rep = run_experiment(pc, ds, cfg["repeats"], cfg["seed"], truth)
    write_report(rep, os.path.join(cfg["out"], "report.json"), header)
    write_roc_csv(rep.roc, os.path.join(cfg["out"], "roc.csv"), header)
    _write_svg(os.path.join(cfg["out"], "roc.svg"), {pc.model: rep.roc}, header)
    m = rep.mean
    print(f"auc={m['auc']:.4f} f1_weighted={m['f1_weighted']:.4f} f1={m['f1']:.4f}")
    return 0


def _write_svg(path, curves, header):
    body = roc_svg(curves)
    with open_output(path) as fh:
        fh.write("<!--\n" + header.replace("--", "- -") + "\n-->\n" + body)


def cmd_reproduce(cfg):
    if cfg["data"]:
        ds = load_dataset(cfg["data"])
        truth = _read_truth(cfg["data"])
    else:
        ds, gt = generate(synth_config(cfg))
        truth = dict(zip(gt.tract_ids, gt.log_odds))
    header = _header(cfg, "reproduce")
    base = pipeline_config(cfg)
    ws = Workspace(ds)
    results = []
    curves = {}
    for row in reproduce_grid(base, gcn_edge_weight_mode=cfg["gcn_edge_weight_mode"]):
        t0 = time.perf_counter()
        rep = run_experiment(row.config, ds, cfg["repeats"], cfg["seed"], truth, ws)
        log.info("%s/%s auc=%.4f (%.1fs)", row.table, row.name, rep.mean["auc"], time.perf_counter() - t0)
        write_report(rep, os.path.join(cfg["out"], "reports", f"{row.table}_{row.name}.json"), header)
        if row.table == "graphsage":
            curves[row.name] = rep.roc
        results.append((row, rep))
    table = comparison_rows(results)
    write_comparison(table, os.path.join(cfg["out"], "comparison.tsv"), header)
    _write_svg(os.path.join(cfg["out"], "roc_graphsage.svg"), curves, header)
    for r in table:
        print(f"{r['table']:<10} {r['row']:<10} auc={r['auc_mean']:.4f}+-{r['auc_std']:.4f} f1_w={r['f1_w']:.4f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def _epilog():
    lines = ["config keys (key=value in --config files or --set):"]
    for k, (d, desc) in RUN_KEYS.items():
        lines.append(f"  {k:<22} default {d!s:<24} {desc}")
    lines.append("  synth.<field>          SynthConfig fields, e.g. synth.n_tracts=2000")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--model", choices=MODELS)
    common.add_argument("--k", type=int)
    common.add_argument("--k-adj", dest="k_adj", type=int)
    common.add_argument("--facilities", help="comma list of school,hospital,subway")
    common.add_argument("--feature-groups", dest="feature_groups", help="comma list of onehot,socio,footprint,hops,degree")
    common.add_argument("--repeats", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(
        prog="urbangraph",
        description="Urban network construction, GNN / forest training and evaluation.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"urbangraph {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        kernels.set_threads(cfg["threads"])
        return COMMANDS[args.command](cfg)
    except (ConfigError, IngestError, ValueError, OSError, FloatingPointError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"urbangraph {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
