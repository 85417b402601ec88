"""Splits, metrics, ROC curves and report export."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import open_output


class EvaluationError(ValueError):
    pass


class TooFewSamples(EvaluationError):
    pass


class SingleClass(EvaluationError):
    pass


class LengthMismatch(EvaluationError):
    pass


METRIC_NAMES = (
    "precision",
    "recall",
    "f1",
    "auc",
    "precision_weighted",
    "recall_weighted",
    "f1_weighted",
    "accuracy",
)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    auc: float
    precision_weighted: float = float("nan")
    recall_weighted: float = float("nan")
    f1_weighted: float = float("nan")
    accuracy: float = float("nan")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


@dataclass
class EvalReport:
    config: dict
    repeats: list[Metrics]
    roc: list[tuple[float, float, float]] = field(default_factory=list)
    test_auc_ceiling: list[float] = field(default_factory=list)

    @property
    def mean(self) -> dict:
        return {k: float(np.mean([getattr(m, k) for m in self.repeats])) for k in METRIC_NAMES}

    @property
    def std(self) -> dict:
        return {k: float(np.std([getattr(m, k) for m in self.repeats])) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        d = {
            "config": self.config,
            "n_repeats": len(self.repeats),
            "mean": self.mean,
            "std": self.std,
            "repeats": [m.as_dict() for m in self.repeats],
        }
        if self.test_auc_ceiling:
            d["oracle_test_auc"] = list(self.test_auc_ceiling)
        return d


def _seed_key(seed, *parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(p) for p in parts]))


def repeat_seed(master: int, r: int) -> int:
    """Derived seed for repeat ``r``; a pure function of ``(master, r)``."""
    h = hashlib.blake2b(f"{int(master)}:{int(r)}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def _check_binary(labels):
    y = np.asarray(labels)
    if y.size and not np.isin(y, (0, 1)).all():
        raise EvaluationError("labels must be 0/1")
    return y.astype(np.int64)


def split_80_20(ids: Sequence[str], labels, seed: int):
    """Stratified split: ``ceil(0.8 n)`` train ids, rest test; order-independent."""
    ids = list(ids)
    y = _check_binary(labels)
    if len(ids) != len(y):
        raise LengthMismatch("ids and labels differ in length")
    n = len(ids)
    if n < 5:
        raise TooFewSamples(f"need at least 5 labeled tracts, got {n}")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == n:
        raise SingleClass("both classes are required for a stratified split")
    n_train = (4 * n + 4) // 5
    train_pos = min(max((8 * n_pos + 5) // 10, 1), n_pos)
    train_neg = n_train - train_pos
    n_neg = n - n_pos
    if train_neg > n_neg:
        train_neg = n_neg
        train_pos = n_train - n_neg
    rng = _seed_key(seed, 8020)
    train, test = [], []
    for cls, n_take in ((1, train_pos), (0, train_neg)):
        members = sorted(i for i, lab in zip(ids, y) if lab == cls)
        perm = rng.permutation(len(members))
        chosen = [members[p] for p in perm]
        train += chosen[:n_take]
        test += chosen[n_take:]
    return sorted(train), sorted(test)


def kfold(ids: Sequence[str], labels, n_folds: int = 5, seed: int = 0) -> dict[str, int]:
    """Stratified fold assignment ``id -> fold``; fold sizes differ by at most 1."""
    ids = list(ids)
    y = _check_binary(labels)
    if len(ids) != len(y):
        raise LengthMismatch("ids and labels differ in length")
    if n_folds < 2:
        raise TooFewSamples("n_folds must be >= 2")
    counts = [int((y == c).sum()) for c in (0, 1)]
    present = [c for c in counts if c > 0]
    if not present or min(present) < n_folds:
        raise TooFewSamples(f"{n_folds} folds need at least {n_folds} members per class, got {counts}")
    rng = _seed_key(seed, 5)
    out = {}
    pos = 0
    for cls in (1, 0):
        members = sorted(i for i, lab in zip(ids, y) if lab == cls)
        for p in rng.permutation(len(members)):
            out[members[p]] = pos % n_folds
            pos += 1
    return out


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def confusion_metrics(predicted, truth, positive: int = 1):
    """Positive-class precision, recall and F1."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise LengthMismatch("empty input")
    tp = int(np.sum((pred == positive) & (true == positive)))
    fp = int(np.sum((pred == positive) & (true != positive)))
    fn = int(np.sum((pred != positive) & (true == positive)))
    return _prf(tp, fp, fn)


def weighted_metrics(predicted, truth):
    """Support-weighted average of per-class precision, recall and F1."""
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    n = true.size
    acc = [0.0, 0.0, 0.0]
    for cls in (0, 1):
        w = np.sum(true == cls) / n
        for i, v in enumerate(confusion_metrics(pred, true, positive=cls)):
            acc[i] += w * v
    return tuple(acc)


def auc(scores, labels) -> float:
    """P(score of random positive > score of random negative), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape} vs {y.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    # midranks give ties half credit
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    ranks = np.empty(s.size)
    starts = np.r_[0, np.nonzero(ss[1:] != ss[:-1])[0] + 1]
    ends = np.r_[starts[1:], s.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """``(fpr, tpr, threshold)`` from ``(0, 0, inf)`` through every distinct score.

    The point for threshold ``t`` classifies ``score >= t`` as positive, so the
    lowest distinct score yields ``(1, 1)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape} vs {y.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    last = np.r_[np.nonzero(ss[1:] != ss[:-1])[0], ss.size - 1]
    tps = np.cumsum(yy)[last]
    fps = (last + 1) - tps
    pts = [(0.0, 0.0, math.inf)]
    pts += [(float(fp) / n_neg, float(tp) / n_pos, float(ss[i])) for fp, tp, i in zip(fps, tps, last)]
    return pts


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def score_predictions(scores, labels, threshold: float = 0.5) -> Metrics:
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    pred = (s >= threshold).astype(np.int64)
    p, r, f = confusion_metrics(pred, y)
    pw, rw, fw = weighted_metrics(pred, y)
    return Metrics(p, r, f, auc(s, y), pw, rw, fw, float(np.mean(pred == y)))


def write_report(report: EvalReport, path, header: str | None = None):
    with open_output(path, header) as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_roc_csv(points, path, header: str | None = None):
    with open_output(path, header) as fh:
        fh.write("threshold,fpr,tpr\n")
        for fpr, tpr, thr in points:
            fh.write(f"{thr!r},{fpr!r},{tpr!r}\n")


def roc_svg(curves: dict, size: int = 360, pad: int = 40) -> str:
    """Standalone SVG with one polyline per named ROC curve and the chance diagonal."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"]
    inner = size - 2 * pad

    def xy(fpr, tpr):
        return f"{pad + fpr * inner:.2f},{pad + (1 - tpr) * inner:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + inner}" x2="{pad + inner}" y2="{pad}" stroke="gray" stroke-dasharray="4,4"/>',
    ]
    for t in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{pad + t * inner:.1f}" y="{pad + inner + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
        parts.append(f'<text x="{pad - 6}" y="{pad + (1 - t) * inner + 4:.1f}" font-size="11" text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 6}" font-size="12" text-anchor="middle">False positive rate</text>')
    parts.append(
        f'<text x="12" y="{size / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {size / 2})">True positive rate</text>'
    )
    for i, (name, pts) in enumerate(curves.items()):
        color = palette[i % len(palette)]
        poly = " ".join(xy(f, t) for f, t, _ in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{poly}"/>')
        parts.append(f'<text x="{pad + inner - 4}" y="{pad + inner - 8 - 14 * i}" font-size="11" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_roc_svg(curves: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(roc_svg(curves))
