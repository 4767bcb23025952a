"""Classification metrics, Welch's t-test and plain-text reports."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .data import Trend

__all__ = [
    "ConfusionMatrix",
    "confusion",
    "accuracy",
    "precision_recall",
    "f1_weighted",
    "f1_macro",
    "one_vs_rest",
    "WelchResult",
    "welch_t",
    "welch_dof",
    "format_table",
    "format_confusion",
]

CLASS_NAMES = {Trend.STILL: "still", Trend.DOWN: "down", Trend.UP: "up"}


class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def support(self):
        return self.counts.sum(axis=1)

    def predicted(self):
        return self.counts.sum(axis=0)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def confusion(preds, truths, n_classes=3):
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if preds.shape != truths.shape:
        raise ValueError("preds and truths must have equal length")
    for arr in (preds, truths):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"class index outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def accuracy(cm):
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def precision_recall(cm):
    """Per-class precision and recall; a zero denominator gives 0."""
    tp = np.diag(cm.counts).astype(np.float64)
    pred = cm.predicted().astype(np.float64)
    sup = cm.support().astype(np.float64)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, sup, out=np.zeros_like(tp), where=sup > 0)
    return precision, recall


def _per_class_f1(cm):
    p, r = precision_recall(cm)
    denom = p + r
    return np.divide(2 * p * r, denom, out=np.zeros_like(p), where=denom > 0)


def f1_weighted(cm):
    """Support-weighted mean of per-class F1."""
    if cm.total == 0:
        return 0.0
    return float((cm.support() / cm.total) @ _per_class_f1(cm))


def f1_macro(cm):
    return float(_per_class_f1(cm).mean())


def one_vs_rest(cm, c):
    """(TP, TN, FP, FN) for class ``c`` against the rest."""
    counts = cm.counts
    tp = int(counts[c, c])
    fn = int(counts[c].sum()) - tp
    fp = int(counts[:, c].sum()) - tp
    tn = cm.total - tp - fn - fp
    return tp, tn, fp, fn


class WelchResult(NamedTuple):
    statistic: float
    pvalue: float


def _moments(sample):
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("each sample needs at least two values")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return x.mean(), x.var(ddof=1), len(x)


def welch_dof(sample_a, sample_b):
    _, va, na = _moments(sample_a)
    _, vb, nb = _moments(sample_b)
    sa, sb = va / na, vb / nb
    if sa + sb == 0:
        raise ValueError("both samples have zero variance")
    return (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))


def welch_t(sample_a, sample_b):
    """Welch's unequal-variance t statistic and an approximate two-sided p-value.

    The p-value maps ``t`` with Welch-Satterthwaite degrees of freedom ``v``
    to a standard normal deviate, ``z = t (1 - 1/(4v)) / sqrt(1 + t^2/(2v))``,
    and doubles the upper normal tail. Good to a few parts in 1e3 for
    ``v >= 5``; coarser for very small samples. ``z`` is bounded by about
    ``sqrt(2v)``, so far-tail p-values bottom out instead of reaching 0.
    """
    ma, va, na = _moments(sample_a)
    mb, vb, nb = _moments(sample_b)
    se2 = va / na + vb / nb
    if se2 == 0:
        raise ValueError("t statistic is undefined: both samples have zero variance")
    t = (ma - mb) / math.sqrt(se2)
    v = welch_dof(sample_a, sample_b)
    z = abs(t) * (1.0 - 1.0 / (4.0 * v)) / math.sqrt(1.0 + t * t / (2.0 * v))
    p = math.erfc(z / math.sqrt(2.0))
    return WelchResult(float(t), float(min(1.0, p)))


def format_table(rows, columns=("ACC", "F1"), first="Model"):
    """Fixed-width text table; ``rows`` is a list of ``(name, {column: text})``."""
    name_w = max([len(first)] + [len(name) for name, _ in rows])
    cells = [[vals.get(c, "") for c in columns] for _, vals in rows]
    col_w = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    fmt_row = lambda name, vals: "  ".join(
        [name.ljust(name_w)] + [v.rjust(w) for v, w in zip(vals, col_w)]
    )
    lines = [fmt_row(first, list(columns))]
    lines.append("-" * len(lines[0]))
    lines += [fmt_row(name, r) for (name, _), r in zip(rows, cells)]
    return "\n".join(lines)


def format_confusion(cm):
    """CSV-style grid: header of predicted classes, one row per true class."""
    names = [CLASS_NAMES.get(Trend(i), str(i)) if i < 3 else str(i) for i in range(cm.n_classes)]
    lines = ["true\\pred," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm.counts[i]))
    return "\n".join(lines)
