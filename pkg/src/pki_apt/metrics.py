"""Confusion matrices and F1-family summaries for imbalanced multiclass runs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ClassIndex
from .errors import LabelOutOfRange, LengthMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_index: ClassIndex

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_dict(self) -> dict:
        return {"classes": self.class_index.to_list(), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(np.asarray(d["counts"], dtype=np.int64), ClassIndex(tuple(d["classes"])))


def _as_index(class_index) -> ClassIndex:
    if isinstance(class_index, ClassIndex):
        return class_index
    if isinstance(class_index, int):
        return ClassIndex(tuple(str(i) for i in range(class_index)))
    return ClassIndex(tuple(class_index))


def confusion_matrix(y_true, y_pred, class_index) -> ConfusionMatrix:
    ci = _as_index(class_index)
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.size} true labels vs {y_pred.size} predictions")
    m = len(ci)
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= m):
            raise LabelOutOfRange(f"labels must lie in [0, {m})")
    counts = np.bincount(y_true * m + y_pred, minlength=m * m).reshape(m, m)
    return ConfusionMatrix(counts, ci)


@dataclass(frozen=True)
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_report(cm: ConfusionMatrix) -> ClassReport:
    """Precision, recall and F1 per class; any 0/0 is scored as 0."""
    tp = np.diag(cm.counts)
    precision = _safe_ratio(tp, cm.counts.sum(axis=0))
    recall = _safe_ratio(tp, cm.counts.sum(axis=1))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    return ClassReport(precision, recall, f1, cm.support)


def macro_f1(cm: ConfusionMatrix) -> float:
    # zero-support classes stay in the denominator; fsum keeps the result
    # independent of class order
    f1 = per_class_report(cm).f1
    return math.fsum(f1.tolist()) / f1.size


def weighted_f1(cm: ConfusionMatrix) -> float:
    rep = per_class_report(cm)
    total = rep.support.sum()
    return math.fsum((rep.f1 * rep.support).tolist()) / float(total) if total else 0.0


def macro_f1_score(y_true, y_pred, n_classes: int) -> float:
    return macro_f1(confusion_matrix(y_true, y_pred, n_classes))


@dataclass(frozen=True)
class SummaryReport:
    confusion: ConfusionMatrix
    classes: ClassReport
    macro_f1: float
    weighted_f1: float

    def to_dict(self) -> dict:
        names = self.confusion.class_index.to_list()
        return {
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                name: {
                    "precision": float(self.classes.precision[i]),
                    "recall": float(self.classes.recall[i]),
                    "f1": float(self.classes.f1[i]),
                    "support": int(self.classes.support[i]),
                }
                for i, name in enumerate(names)
            },
            "confusion_matrix": self.confusion.to_dict(),
        }


def summarize(cm: ConfusionMatrix) -> SummaryReport:
    return SummaryReport(cm, per_class_report(cm), macro_f1(cm), weighted_f1(cm))


def evaluate(y_true, y_pred, class_index) -> SummaryReport:
    return summarize(confusion_matrix(y_true, y_pred, class_index))


def render_f1_table(columns: dict[str, SummaryReport], digits: int = 3) -> str:
    """Per-class F1 rows, then ``W Avg`` and ``M Avg``; one column per model."""
    heads = list(columns)
    first = next(iter(columns.values()))
    names = first.confusion.class_index.to_list()
    width = max([len(n) for n in names] + [len("Class"), len("M Avg")])
    colw = max([len(h) for h in heads] + [digits + 2])
    lines = ["Class".ljust(width) + "".join("  " + h.rjust(colw) for h in heads)]
    for i, name in enumerate(names):
        cells = [f"{columns[h].classes.f1[i]:.{digits}f}" for h in heads]
        lines.append(name.ljust(width) + "".join("  " + c.rjust(colw) for c in cells))
    for label, attr in (("W Avg", "weighted_f1"), ("M Avg", "macro_f1")):
        cells = [f"{getattr(columns[h], attr):.{digits}f}" for h in heads]
        lines.append(label.ljust(width) + "".join("  " + c.rjust(colw) for c in cells))
    return "\n".join(lines)


def render_confusion(cm: ConfusionMatrix) -> str:
    names = cm.class_index.to_list()
    width = max(len(n) for n in names)
    colw = max(max(len(n) for n in names), len(str(int(cm.counts.max(initial=0)))))
    lines = []
    for i, name in enumerate(names):
        lines.append(name.ljust(width) + "".join("  " + str(int(v)).rjust(colw) for v in cm.counts[i]))
    lines.append(" " * width + "".join("  " + n.rjust(colw) for n in names))
    return "\n".join(lines)
