"""Confusion matrix and detection metrics.

Precision and recall are macro averages: per-class ratios with the 0/0
convention of 0, summed and divided by the class count, so every metric
stays in [0, 1].
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t][p]: samples of true class t predicted as class p."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if counts.min() < 0:
            raise ValidationError("confusion counts must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds, labels, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValidationError("preds and labels must be 1-d and the same length")
    if preds.size and (preds.min() < 0 or preds.max() >= n_classes):
        raise ValidationError(f"predictions must lie in [0, {n_classes})")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("confusion matrix is empty")
    return float(np.trace(cm.counts)) / cm.total


def _macro(per_class_tp: np.ndarray, denominators: np.ndarray) -> float:
    ratios = np.where(denominators > 0, per_class_tp / np.where(denominators > 0, denominators, 1), 0.0)
    return float(ratios.mean())


def macro_precision(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    return _macro(tp, cm.counts.sum(axis=0).astype(np.float64))


def macro_recall(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    return _macro(tp, cm.counts.sum(axis=1).astype(np.float64))


def tail_average(series, window: int) -> float:
    """Arithmetic mean of the final `window` entries."""
    values = list(series)
    if window < 1:
        raise ValidationError("window must be >= 1")
    if window > len(values):
        raise ValidationError(f"window {window} exceeds series length {len(values)}")
    return float(np.mean(values[-window:]))


def format_confusion_csv(cm: ConfusionMatrix, class_names) -> str:
    """CSV grid: header of class names, one row per true class."""
    names = list(class_names)
    if len(names) != cm.n_classes:
        raise ValidationError("class name count does not match matrix size")
    out = io.StringIO()
    out.write("true\\pred," + ",".join(names) + "\n")
    for i, name in enumerate(names):
        out.write(name + "," + ",".join(str(int(c)) for c in cm.counts[i]) + "\n")
    return out.getvalue()
