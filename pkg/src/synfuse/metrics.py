"""Binary classification metrics over synergy probabilities."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

METRIC_NAMES = ("auroc", "aupr", "acc", "bacc", "prec", "tpr", "kappa", "f1")


class SingleClassInput(ValueError):
    """Only one label class present; ranking metrics are undefined."""


@dataclass
class MetricsReport:
    auroc: float | None
    aupr: float | None
    acc: float
    bacc: float
    prec: float
    tpr: float
    kappa: float | None
    f1: float
    n_pos: int
    n_neg: int

    def as_dict(self):
        return asdict(self)


def midranks(x):
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def auroc(scores, labels):
    """Mann-Whitney statistic; a tied positive/negative pair counts one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("AUROC needs both classes")
    ranks = midranks(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels):
    """Step-interpolated area under the precision-recall curve, one step per distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise SingleClassInput("AUPR needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # final index of every tie block
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def cohen_kappa(pred, labels):
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    n = labels.size
    p_o = float(np.mean(pred == labels))
    p_e = (pred.sum() * labels.sum() + (~pred).sum() * (~labels).sum()) / float(n * n)
    if p_e == 1.0:
        return None
    return (p_o - p_e) / (1.0 - p_e)


def _ratio(num, den):
    return num / den if den else 0.0


def compute_metrics(scores, labels, threshold=0.5):
    """All table metrics; thresholded ones use ``score >= threshold`` as synergy."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(int).reshape(-1)
    if scores.size == 0 or scores.size != labels.size:
        raise ValueError(f"need matching non-empty scores/labels, got {scores.size} and {labels.size}")
    pos = labels == 1
    pred = scores >= threshold
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    try:
        roc = auroc(scores, labels)
        pr = average_precision(scores, labels)
    except SingleClassInput:
        roc = pr = None
    tpr = _ratio(tp, tp + fn)
    tnr = _ratio(tn, tn + fp)
    prec = _ratio(tp, tp + fp)
    return MetricsReport(
        auroc=roc,
        aupr=pr,
        acc=(tp + tn) / scores.size,
        bacc=(tpr + tnr) / 2.0,
        prec=prec,
        tpr=tpr,
        kappa=cohen_kappa(pred, pos),
        f1=_ratio(2 * prec * tpr, prec + tpr),
        n_pos=int(pos.sum()),
        n_neg=int((~pos).sum()),
    )


def summarize(reports):
    """Per-metric (mean, std) over folds, ignoring undefined entries; std is the population std."""
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = (float(np.mean(vals)), float(np.std(vals))) if vals else (None, None)
    return out


def _cell(x):
    return "undefined" if x is None else repr(float(x))


def write_metrics_csv(path, reports, fold_names=None):
    fold_names = fold_names or [str(i) for i in range(len(reports))]
    summary = summarize(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", *METRIC_NAMES, "n_pos", "n_neg"])
        for name, r in zip(fold_names, reports):
            w.writerow([name, *(_cell(getattr(r, m)) for m in METRIC_NAMES), r.n_pos, r.n_neg])
        row = []
        for m in METRIC_NAMES:
            mean, std = summary[m]
            row.append("undefined" if mean is None else f"{mean:.4f} ± {std:.4f}")
        w.writerow(["mean ± std", *row, sum(r.n_pos for r in reports), sum(r.n_neg for r in reports)])


def write_metrics_json(path, reports, fold_names=None, extra=None):
    fold_names = fold_names or [str(i) for i in range(len(reports))]
    summary = summarize(reports)
    doc = {
        "folds": [{"fold": n, **r.as_dict()} for n, r in zip(fold_names, reports)],
        "mean": {m: summary[m][0] for m in METRIC_NAMES},
        "std": {m: summary[m][1] for m in METRIC_NAMES},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
