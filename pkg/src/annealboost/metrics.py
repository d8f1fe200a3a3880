"""Multiclass confusion matrix and macro-averaged scores.

Rows of the matrix are actual classes, columns are predicted classes. The
four scores are computed per class from the matrix and averaged unweighted;
a class with an empty precision or recall denominator contributes 0 to its
average instead of poisoning the result with NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # shape (n_classes, n_classes), actual by row

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(actual, predicted, n_classes: int) -> ConfusionMatrix:
    """Tally actual/predicted index pairs into an n_classes x n_classes matrix."""
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise InputError(
            f"actual and predicted lengths differ: {actual.size} vs {predicted.size}"
        )
    if actual.size and (
        actual.min() < 0
        or predicted.min() < 0
        or actual.max() >= n_classes
        or predicted.max() >= n_classes
    ):
        raise InputError(f"class index out of range for n_classes={n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts=counts)


def macro_scores(cm: ConfusionMatrix) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) macro-averaged over classes.

    Accuracy is the mean per-class (TP + TN) / total; F1 is the harmonic mean
    of the macro precision and macro recall.
    """
    total = cm.total
    if total == 0:
        raise InputError("empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp
    tn = total - tp - fn - fp

    accuracy = float(np.mean((tp + tn) / total))
    prec_den = tp + fp
    rec_den = tp + fn
    precision = float(
        np.mean(np.divide(tp, prec_den, out=np.zeros_like(tp), where=prec_den > 0))
    )
    recall = float(
        np.mean(np.divide(tp, rec_den, out=np.zeros_like(tp), where=rec_den > 0))
    )
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return accuracy, precision, recall, f1


def scores_dict(cm: ConfusionMatrix) -> dict[str, float]:
    """The four macro scores keyed by name, for JSON reports."""
    accuracy, precision, recall, f1 = macro_scores(cm)
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}
