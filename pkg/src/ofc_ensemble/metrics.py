"""Binary classification metrics (pass = positive) and their aggregation.

Undefined values (0/0 denominators, single-class AUC) are ``None``, never 0.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .tabular import FAIL, PASS

METRICS = ("auc", "f1", "accuracy", "sensitivity", "specificity", "ppv")
METRIC_TITLES = {"auc": "AUC", "f1": "F1", "accuracy": "Accuracy", "sensitivity": "Sensitivity",
                 "specificity": "Specificity", "ppv": "PPV"}
UNDEFINED = "undefined"


class UndefinedMetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Probability that a random pass outscores a random fail, ties counting 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == PASS
    n_pos, n_neg = int(pos.sum()), int((labels == FAIL).sum())
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be pass (1) or fail (0)")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions, labels) -> ConfusionCounts:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    return ConfusionCounts(tp=int(((p == PASS) & (y == PASS)).sum()), fp=int(((p == PASS) & (y == FAIL)).sum()),
                           tn=int(((p == FAIL) & (y == FAIL)).sum()), fn=int(((p == FAIL) & (y == PASS)).sum()))


@dataclass(frozen=True)
class MetricReport:
    auc: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    ppv: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den):
    return None if den == 0 else num / den


def derive_metrics(c: ConfusionCounts, auc_value: float | None = None) -> MetricReport:
    sens = _ratio(c.tp, c.tp + c.fn)
    ppv = _ratio(c.tp, c.tp + c.fp)
    if sens is None or ppv is None:
        f1 = None
    else:
        f1 = 0.0 if sens + ppv == 0 else 2 * ppv * sens / (ppv + sens)
    return MetricReport(auc=auc_value, f1=f1, accuracy=_ratio(c.tp + c.tn, c.total), sensitivity=sens,
                        specificity=_ratio(c.tn, c.tn + c.fp), ppv=ppv)


def evaluate(scores, predictions, labels) -> MetricReport:
    try:
        a = auc(scores, labels)
    except UndefinedMetricError:
        a = None
    return derive_metrics(confusion(predictions, labels), a)


@dataclass(frozen=True)
class MetricSummary:
    """Per-shuffle reports with their elementwise mean and sample std."""
    per_shuffle: tuple[MetricReport, ...]
    mean: MetricReport
    std: MetricReport
    skipped: dict = field(default_factory=dict)

    def cell(self, metric: str, digits: int = 3) -> str:
        m, s = getattr(self.mean, metric), getattr(self.std, metric)
        if m is None:
            return UNDEFINED
        return f"{m:.{digits}f} ({UNDEFINED if s is None else f'{s:.{digits}f}'})"

    def as_dict(self) -> dict:
        return {"per_shuffle": [r.as_dict() for r in self.per_shuffle], "mean": self.mean.as_dict(),
                "std": self.std.as_dict(), "skipped": dict(self.skipped)}


def _sample_std(vals, mean) -> float:
    if min(vals) == max(vals):
        return 0.0
    return math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))


def aggregate(per_shuffle: Sequence[MetricReport]) -> MetricSummary:
    """Mean and sample (n - 1) std of each metric, skipping undefined entries."""
    reports = tuple(per_shuffle)
    if not reports:
        raise ValueError("nothing to aggregate")
    means, stds, skipped = {}, {}, {}
    for m in METRICS:
        vals = [getattr(r, m) for r in reports if getattr(r, m) is not None]
        skipped[m] = len(reports) - len(vals)
        means[m] = math.fsum(vals) / len(vals) if vals else None
        stds[m] = _sample_std(vals, means[m]) if len(vals) > 1 else None
    return MetricSummary(reports, MetricReport(**means), MetricReport(**stds), skipped)
