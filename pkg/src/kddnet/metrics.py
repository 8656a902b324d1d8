"""Confusion matrices, per-class reports and binary ROC/AUC."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred", *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        names = tuple(rows[0][1:])
        counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cls(counts, names)


def confusion(truth, pred, k: int, class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape[0]} truths vs {pred.shape[0]} predictions")
    for arr in (truth, pred):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"class index out of range [0, {k})")
    counts = np.bincount(truth * k + pred, minlength=k * k).reshape(k, k)
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(k))
    return ConfusionMatrix(counts, names)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # undefined ratios (0/0) are reported as 0
    return np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)


@dataclass
class ClassReport:
    class_names: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_f1: float
    weighted_f1: float

    def recall_of(self, name: str) -> float:
        return float(self.recall[self.class_names.index(name)])

    def to_dict(self) -> dict:
        """Layout follows the familiar ``classification_report(output_dict=True)`` shape."""
        out: dict = {}
        for i, name in enumerate(self.class_names):
            out[name] = {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                         "f1-score": float(self.f1[i]), "support": int(self.support[i])}
        n = int(self.support.sum())
        w = self.support / n
        out["accuracy"] = self.accuracy
        out["macro avg"] = {"precision": float(self.precision.mean()),
                            "recall": float(self.recall.mean()),
                            "f1-score": self.macro_f1, "support": n}
        out["weighted avg"] = {"precision": float(w @ self.precision),
                               "recall": float(w @ self.recall),
                               "f1-score": self.weighted_f1, "support": n}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def class_report(cm: ConfusionMatrix) -> ClassReport:
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassReport(
        class_names=cm.class_names,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(np.int64),
        accuracy=float(tp.sum() / total),
        macro_f1=float(f1.mean()),
        weighted_f1=float((support / total) @ f1),
    )


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, x, y in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
        return buf.getvalue()


def roc_auc(scores, truth) -> RocCurve:
    """ROC points from a descending sweep over distinct scores, and trapezoidal AUC.

    Rows with equal scores enter the curve together, so the area equals
    P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg).
    The first point is (0, 0) at threshold +inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative row")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    t = truth[order]
    tps = np.cumsum(t)
    fps = np.cumsum(~t)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)
