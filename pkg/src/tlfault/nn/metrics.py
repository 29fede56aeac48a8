"""Classification and regression scores.

Accuracy is the one-vs-rest form: TP+TN over TP+TN+FP+FN with the counts
summed over every class. For K classes that equals 1 - 2*(error rate)/K,
which is why it sits far above the fraction of correct predictions when K
is large. Precision and recall are macro averages over the classes present
in the ground truth; F1 is the harmonic mean of those two averages.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ValidationError

log = logging.getLogger(__name__)


@dataclass
class Metrics:
    counts: np.ndarray | None = None  # (K, 4): TP, TN, FP, FN per class
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    fraction_correct: float = float("nan")
    mse: float = float("nan")
    train_time: float = float("nan")
    n: int = 0

    def scores(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("counts")
        return d


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def one_vs_rest_counts(cm: np.ndarray) -> np.ndarray:
    total = cm.sum()
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    return np.stack([tp, tn, fp, fn], axis=1)


def binary_scores(tp: float, fp: float, fn: float, tn: float) -> dict[str, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (tp + tn) / (tp + tn + fp + fn),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def classification_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    y_true = np.asarray(y_true, int)
    y_pred = np.asarray(y_pred, int)
    if y_true.size == 0:
        raise ValidationError("cannot score an empty set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    counts = one_vs_rest_counts(cm)
    tp, tn, fp, fn = counts.sum(axis=0)
    present = np.flatnonzero(cm.sum(axis=1) > 0)
    if len(present) < n_classes:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        log.warning("classes %s absent from the evaluation set; left out of macro averages", missing)
    ctp = counts[present, 0].astype(float)
    pred_pos = ctp + counts[present, 2]
    prec = np.divide(ctp, pred_pos, out=np.zeros_like(ctp), where=pred_pos > 0)
    rec = ctp / (ctp + counts[present, 3])
    p, r = float(prec.mean()), float(rec.mean())
    return Metrics(
        counts=counts,
        accuracy=float((tp + tn) / (tp + tn + fp + fn)),
        precision=p,
        recall=r,
        f1=2 * p * r / (p + r) if p + r > 0 else 0.0,
        fraction_correct=float(np.mean(y_true == y_pred)),
        n=int(y_true.size),
    )


def mean_squared_error(pred, target) -> float:
    pred = np.asarray(pred, float)
    target = np.asarray(target, float)
    if pred.shape != target.shape or pred.size == 0:
        raise ValidationError("prediction and target must be non-empty and equal length")
    return float(np.mean((pred - target) ** 2))
