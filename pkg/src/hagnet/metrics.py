"""Binary classification metrics and the median-filter convergence spread (mstd)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

__all__ = [
    "UndefinedMetricError",
    "ScoredPredictions",
    "MetricCurve",
    "error_rate",
    "accuracy",
    "auroc",
    "average_precision",
    "aupr_harmonic",
    "per_class_prf",
    "median_filter",
    "mstd",
    "all_metrics",
]


class UndefinedMetricError(ValueError):
    """Metric not defined for the given predictions (e.g. a single class)."""


@dataclass(frozen=True)
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray

    def __init__(self, scores, labels):
        s = np.asarray(scores, dtype=np.float64).reshape(-1)
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if s.shape != y.shape:
            raise ValueError(f"{s.size} scores vs {y.size} labels")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.scores.size


@dataclass
class MetricCurve:
    values: np.ndarray
    name: str = ""

    def __init__(self, values, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64).reshape(-1)
        self.name = name


def _preds(p, labels=None) -> ScoredPredictions:
    if isinstance(p, ScoredPredictions):
        return p
    return ScoredPredictions(p, labels)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, MetricCurve) else np.asarray(x, dtype=np.float64).reshape(-1)


def error_rate(p, labels=None, threshold: float = 0.5) -> float:
    """Fraction misclassified when predicting class 1 for score >= threshold."""
    p = _preds(p, labels)
    if len(p) == 0:
        raise UndefinedMetricError("error rate of empty predictions")
    pred = (p.scores >= threshold).astype(np.int64)
    return float(np.mean(pred != p.labels))


def accuracy(p, labels=None, threshold: float = 0.5) -> float:
    p = _preds(p, labels)
    if len(p) == 0:
        raise UndefinedMetricError("accuracy of empty predictions")
    return float(np.mean((p.scores >= threshold).astype(np.int64) == p.labels))


def _both_classes(p: ScoredPredictions, what: str) -> None:
    npos = int(p.labels.sum())
    if npos == 0 or npos == len(p):
        raise UndefinedMetricError(f"{what} needs both classes present")


def auroc(p, labels=None) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    p = _preds(p, labels)
    _both_classes(p, "AuROC")
    ranks = rankdata(p.scores)  # average ranks resolve ties as 1/2
    pos = p.labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-interpolated area under the PR curve for class 1.

    Thresholds run over distinct scores in descending order; each adds
    (recall gain) x (precision at that threshold).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs a positive sample")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


def aupr_harmonic(p, labels=None) -> float:
    """Harmonic mean of positive-class and negative-class average precision."""
    p = _preds(p, labels)
    _both_classes(p, "AuPR")
    a = average_precision(p.scores, p.labels)
    b = average_precision(1.0 - p.scores, 1 - p.labels)
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def per_class_prf(p, labels=None, threshold: float = 0.5) -> Dict[str, float]:
    """Precision, recall and F1 per class at a fixed threshold (0 where undefined)."""
    p = _preds(p, labels)
    pred = (p.scores >= threshold).astype(np.int64)
    out = {}
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (p.labels == cls)))
        npred = int(np.sum(pred == cls))
        ntrue = int(np.sum(p.labels == cls))
        prec = tp / npred if npred else 0.0
        rec = tp / ntrue if ntrue else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[f"precision_{cls}"] = prec
        out[f"recall_{cls}"] = rec
        out[f"f1_{cls}"] = f1
    return out


def median_filter(x, w: int) -> MetricCurve:
    """Running median over windows of 2w+1 with edge-replicated padding."""
    if w < 0:
        raise ValueError("window half-width must be >= 0")
    v = _values(x)
    name = x.name if isinstance(x, MetricCurve) else ""
    if w == 0 or v.size == 0:
        return MetricCurve(v.copy(), name)
    padded = np.pad(v, w, mode="edge")
    return MetricCurve(np.median(sliding_window_view(padded, 2 * w + 1), axis=1), name)


def mstd(x, w: int = 5) -> float:
    """Population std of the residual between a curve and its median filtering."""
    v = _values(x)
    if v.size < 2:
        raise ValueError("mstd needs a curve of length >= 2")
    return float(np.std(v - median_filter(v, w).values))


def all_metrics(p, labels=None) -> Dict[str, float]:
    p = _preds(p, labels)
    return {
        "er": error_rate(p),
        "auroc": auroc(p),
        "aupr_harmonic": aupr_harmonic(p),
    }
