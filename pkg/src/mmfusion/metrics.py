"""Classification metrics: confusion counts plus macro-averaged
precision/recall/F1 over the two classes (fake = positive for the counts)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "n": self.n,
            "averaging": "macro",
        }


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def metrics_from_predictions(y_true, y_pred) -> MetricsReport:
    """Counts treat the fake class (1) as positive; precision/recall are
    macro averages over {real, fake}; F1 is the harmonic mean of the macro
    precision and macro recall."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("cannot compute metrics over an empty sample list")
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label/prediction shape mismatch: {y_true.shape} vs {y_pred.shape}")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    prec_fake = _safe_div(tp, tp + fp)
    prec_real = _safe_div(tn, tn + fn)
    rec_fake = _safe_div(tp, tp + fn)
    rec_real = _safe_div(tn, tn + fp)
    precision = (prec_fake + prec_real) / 2.0
    recall = (rec_fake + rec_real) / 2.0
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    accuracy = (tp + tn) / y_true.size
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall,
                         f1=f1, tp=tp, fp=fp, tn=tn, fn=fn)
