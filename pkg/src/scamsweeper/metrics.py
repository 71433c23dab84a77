from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["MetricsReport", "confusion_matrix", "report_from_confusion", "classification_report",
           "weighted_f1"]


@dataclass
class MetricsReport:
    classes: tuple
    confusion: np.ndarray  # rows = true class, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_f1: float
    macro_f1: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        per_class = {
            str(c): {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                     "f1": float(self.f1[i]), "support": int(self.support[i])}
            for i, c in enumerate(self.classes)
        }
        out = {
            "per_class": per_class,
            "weighted_f1": float(self.weighted_f1),
            "macro_f1": float(self.macro_f1),
            "confusion": self.confusion.astype(int).tolist(),
            "classes": [str(c) for c in self.classes],
        }
        out.update(self.extra)
        return out

    def table(self) -> str:
        lines = [f"{'class':<10} {'precision':>9} {'recall':>7} {'f1':>7} {'support':>8}"]
        for i, c in enumerate(self.classes):
            lines.append(f"{str(c):<10} {self.precision[i]:>9.4f} {self.recall[i]:>7.4f} "
                         f"{self.f1[i]:>7.4f} {int(self.support[i]):>8d}")
        lines.append(f"weighted F1 {self.weighted_f1:.4f}   macro F1 {self.macro_f1:.4f}")
        return "\n".join(lines)


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def report_from_confusion(cm: np.ndarray, classes: Sequence = ()) -> MetricsReport:
    """Per-class precision/recall/F1 and their weighted and macro means.

    A ratio with a zero denominator is 0; weighted F1 weights each class's F1
    by its share of the true labels.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    weighted = float(np.sum(support / support.sum() * f1))
    classes = tuple(classes) if len(classes) else tuple(range(cm.shape[0]))
    return MetricsReport(classes, cm.astype(np.int64), precision, recall, f1,
                         support.astype(np.int64), weighted, float(f1.mean()))


def classification_report(y_true, y_pred, classes: Sequence) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, len(classes)), classes)


def weighted_f1(y_true, y_pred, n_classes: int) -> float:
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes)).weighted_f1
