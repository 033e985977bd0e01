"""Binary-classification evaluation: AUC, LogLoss, confusion counts,
precision/recall/F1, threshold sweeps, ROC points and relative improvement.

A prediction counts as positive when ``prob >= threshold``.  Ratios whose
denominator is zero are reported as 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

CLIP = 1e-7
DEFAULT_THRESHOLD = 0.3
CURVE_KINDS = ("roc", "precision_vs_threshold", "recall_vs_threshold", "f1_vs_threshold", "precision_vs_recall")


class UndefinedAUCError(ValueError):
    """AUC needs at least one positive and one negative example."""


def _labels_scores(labels, scores):
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ValueError(f"labels ({y.size}) and scores ({s.size}) differ in length")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0/1")
    return y, s


def auc(labels, scores) -> float:
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ordered correctly, ties count 1/2."""
    y, s = _labels_scores(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC is undefined with a single class present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(labels, probs) -> float:
    """Mean binary cross-entropy, probabilities clipped to [1e-7, 1 - 1e-7]."""
    y, p = _labels_scores(labels, probs)
    if y.size == 0:
        raise ValueError("logloss of an empty set is undefined")
    p = np.clip(p, CLIP, 1.0 - CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def relative_improvement(x_model: float, x_base: float) -> float:
    """``|x_model - x_base| / x_base * 100`` (percent)."""
    if x_base == 0:
        raise ZeroDivisionError("relative improvement against a zero baseline")
    return abs(x_model - x_base) / x_base * 100.0


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1, "accuracy": self.accuracy,
        }


def confusion_at(labels, probs, threshold: float) -> Confusion:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    y, p = _labels_scores(labels, probs)
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return Confusion(tp, fp, tn, fn, float(threshold))


@dataclass
class CurveSeries:
    kind: str
    points: list[tuple[float, float]]

    @property
    def x(self) -> np.ndarray:
        return np.array([pt[0] for pt in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([pt[1] for pt in self.points])

    def area(self) -> float:
        """Trapezoidal area under the points in the given order."""
        x, y = self.x, self.y
        return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))

    def header(self) -> tuple[str, str]:
        return {
            "roc": ("fpr", "tpr"),
            "precision_vs_threshold": ("threshold", "precision"),
            "recall_vs_threshold": ("threshold", "recall"),
            "f1_vs_threshold": ("threshold", "f1"),
            "precision_vs_recall": ("recall", "precision"),
        }[self.kind]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            writer.writerows(self.points)

    @classmethod
    def from_csv(cls, kind: str, path) -> "CurveSeries":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(kind, [(float(a), float(b)) for a, b in rows])


def roc_points(labels, scores) -> CurveSeries:
    """(fpr, tpr) after every distinct score cut, from (0, 0) to (1, 1)."""
    y, s = _labels_scores(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC curve is undefined with a single class present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last position of every run of equal scores
    cut = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tps = np.cumsum(y_sorted)[cut]
    fps = (cut + 1) - tps
    points = [(0.0, 0.0)] + [(float(f / n_neg), float(t / n_pos)) for f, t in zip(fps, tps)]
    return CurveSeries("roc", points)


def default_grid() -> np.ndarray:
    return np.round(np.arange(101) * 0.01, 2)


@dataclass
class ThresholdSweep:
    precision: CurveSeries
    recall: CurveSeries
    f1: CurveSeries
    precision_recall: CurveSeries
    best_threshold: float
    best_f1: float

    def curves(self) -> dict[str, CurveSeries]:
        return {c.kind: c for c in (self.precision, self.recall, self.f1, self.precision_recall)}


def threshold_sweep(labels, probs, grid=None) -> ThresholdSweep:
    """Precision, recall and F1 at each threshold of ``grid`` (ascending).

    The returned best threshold is the lowest grid value attaining maximal F1.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("threshold grid must be sorted ascending")
    conf = [confusion_at(labels, probs, float(t)) for t in grid]
    prec = [(c.threshold, c.precision) for c in conf]
    rec = [(c.threshold, c.recall) for c in conf]
    f1 = [(c.threshold, c.f1) for c in conf]
    pr = [(c.recall, c.precision) for c in conf]
    f1_values = np.array([v for _, v in f1])
    best = int(np.argmax(f1_values))  # first maximum = lowest threshold
    return ThresholdSweep(
        CurveSeries("precision_vs_threshold", prec),
        CurveSeries("recall_vs_threshold", rec),
        CurveSeries("f1_vs_threshold", f1),
        CurveSeries("precision_vs_recall", pr),
        float(grid[best]),
        float(f1_values[best]),
    )


@dataclass
class MetricsReport:
    auc: float | None
    logloss: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    n_examples: int
    curves: dict[str, list] = field(default_factory=dict)

    def to_dict(self, with_curves: bool = True) -> dict:
        d = asdict(self)
        if not with_curves:
            d.pop("curves")
        return d

    def to_json(self, with_curves: bool = True) -> str:
        return json.dumps(self.to_dict(with_curves), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["curves"] = {k: [tuple(p) for p in v] for k, v in d.get("curves", {}).items()}
        return cls(**d)

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        a["curves"] = {k: [list(p) for p in v] for k, v in a["curves"].items()}
        b["curves"] = {k: [list(p) for p in v] for k, v in b["curves"].items()}
        return a == b


def evaluate(labels, probs, threshold: float = DEFAULT_THRESHOLD, with_curves: bool = False, grid=None) -> MetricsReport:
    """Bundle every metric for one set of predictions.

    AUC is ``None`` (and the ROC curve omitted) when only one class is present.
    """
    y, p = _labels_scores(labels, probs)
    try:
        auc_value = auc(y, p)
    except UndefinedAUCError:
        auc_value = None
    c = confusion_at(y, p, threshold)
    curves = {}
    if with_curves:
        if auc_value is not None:
            curves["roc"] = roc_points(y, p).points
        for kind, series in threshold_sweep(y, p, grid).curves().items():
            curves[kind] = series.points
    return MetricsReport(
        auc_value, logloss(y, p), float(threshold), c.tp, c.fp, c.tn, c.fn,
        c.precision, c.recall, c.f1, int(y.size), curves,
    )


def safe_auc(labels, scores) -> float:
    try:
        return auc(labels, scores)
    except UndefinedAUCError:
        return math.nan
