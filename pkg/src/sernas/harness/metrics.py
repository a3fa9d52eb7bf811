"""Unweighted accuracy and confusion matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EMOTIONS = ("neutral", "angry", "happy", "sad")


class ZeroSupportError(ValueError):
    pass


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def per_class_recall(predictions, labels, classes=None) -> dict[int, float]:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    out = {}
    for c in classes:
        support = int((y == c).sum())
        if support == 0:
            raise ZeroSupportError(f"class {c} has no examples")
        out[c] = int(((y == c) & (p == c)).sum()) / support
    return out


def unweighted_accuracy(predictions, labels, num_classes: int | None = None) -> float:
    """Mean of per-class recalls. With ``num_classes`` every class in
    ``range(num_classes)`` must be present; otherwise classes are those
    occurring in ``labels``."""
    classes = None if num_classes is None else range(num_classes)
    recalls = per_class_recall(predictions, labels, classes)
    if not recalls:
        raise ZeroSupportError("no labels")
    return float(np.mean(list(recalls.values())))


@dataclass
class MetricsReport:
    recalls: dict[int, float]
    ua: float
    confusion: np.ndarray
    param_count: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def compute(cls, predictions, labels, num_classes: int = 4, param_count: int = 0) -> "MetricsReport":
        present = sorted(set(np.asarray(labels).tolist()))
        recalls = per_class_recall(predictions, labels, present)
        return cls(recalls, float(np.mean(list(recalls.values()))), confusion_matrix(predictions, labels, num_classes), param_count)

    def row(self) -> dict:
        out = {"ua": self.ua, "params": self.param_count}
        for c in range(self.confusion.shape[0]):
            name = EMOTIONS[c] if self.confusion.shape[0] == len(EMOTIONS) else str(c)
            out[f"recall_{name}"] = self.recalls.get(c, float("nan"))
        out.update(self.extra)
        return out
