"""Mutual information, mRMR ranking and elbow-based feature-count choice."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .provenance import guard
from .tabular import Table

DEFAULT_BINS = 10
SCORE_TIE = 1e-12


@dataclass(frozen=True)
class MiEstimate:
    value: float
    bins: int

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class FeatureRanking:
    ordered: tuple[tuple[str, float], ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.ordered)

    def rank_of(self, name: str) -> int:
        """1-based rank."""
        return self.names.index(name) + 1

    def top(self, k: int) -> tuple[str, ...]:
        return self.names[:k]


def discretize(x, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Integer codes for ``x``.

    Variables with at most ``bins`` distinct values keep their own categories;
    anything else is cut into ``bins`` equal-frequency bins by rank, with tied
    values sharing a bin. Both cases depend only on the ordering of ``x``.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    x = np.asarray(x)
    uniq, codes = np.unique(x, return_inverse=True)
    if len(uniq) <= bins:
        return codes.reshape(-1)
    ranks = rankdata(x, method="min")
    return ((ranks - 1) * bins // len(x)).astype(int)


def _mi_from_codes(a: np.ndarray, b: np.ndarray) -> float:
    n = len(a)
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb).astype(float)
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    i, j = np.nonzero(joint)
    c = joint[i, j]
    value = float(np.sum(c / n * np.log(c * n / (pa[i] * pb[j]))))
    return max(value, 0.0)


def mutual_information(x, y, bins: int = DEFAULT_BINS) -> MiEstimate:
    """Plug-in mutual information (nats) of the discretized joint histogram."""
    x, y = np.asarray(x), np.asarray(y)
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    return MiEstimate(_mi_from_codes(discretize(x, bins), discretize(y, bins)), bins)


def mrmr_rank(t: Table, candidate_features: Iterable[str], bins: int = DEFAULT_BINS) -> FeatureRanking:
    """Greedy minimum-redundancy maximum-relevance ordering (difference form).

    Step one takes the feature with the largest MI with the outcome; every later
    step maximizes ``MI(f, y) - mean_{s in S} MI(f, s)``. Scores within
    ``SCORE_TIE`` of the best are ties, resolved by the table's column order.
    """
    guard("mutual_information", t)
    wanted = set(candidate_features)
    if not wanted:
        raise ValueError("no candidate features")
    unknown = wanted - set(t.names)
    if unknown:
        raise KeyError(f"unknown candidate features {sorted(unknown)}")
    names = [n for n in t.names if n in wanted]
    codes = {n: discretize(t.column(n), bins) for n in names}
    y = discretize(t.labels, bins)
    relevance = {n: _mi_from_codes(codes[n], y) for n in names}
    redundancy = dict.fromkeys(names, 0.0)

    remaining = list(names)
    ordered = []
    while remaining:
        k = len(ordered)
        scores = [relevance[n] - (redundancy[n] / k if k else 0.0) for n in remaining]
        best = max(scores)
        pick = next(i for i, s in enumerate(scores) if s >= best - SCORE_TIE)
        chosen = remaining.pop(pick)
        ordered.append((chosen, scores[pick]))
        for n in remaining:
            redundancy[n] += _mi_from_codes(codes[n], codes[chosen])
    return FeatureRanking(tuple(ordered))


@dataclass(frozen=True)
class RankSummary:
    feature: str
    mean_rank: float
    std_rank: float


def summarize_rankings(rankings: Sequence[FeatureRanking]) -> list[RankSummary]:
    """Mean and sample std of each feature's rank across shuffles, best first."""
    if not rankings:
        return []
    feats = sorted(set().union(*(r.names for r in rankings)))
    rows = []
    for f in feats:
        ranks = np.array([r.rank_of(f) for r in rankings if f in r.names], dtype=float)
        std = float(ranks.std(ddof=1)) if len(ranks) > 1 else 0.0
        rows.append(RankSummary(f, float(ranks.mean()), std))
    rows.sort(key=lambda r: (r.mean_rank, r.feature))
    return rows


def elbow_select(performance_curve: Sequence[tuple[int, float]]) -> int:
    """Pick the knee of a (k, score) curve.

    Both axes are scaled to [0, 1] and the interior point furthest from the
    chord joining the end points wins; ties go to the smaller ``k``.
    """
    pts = [(int(k), float(v)) for k, v in performance_curve]
    if len(pts) < 3:
        raise ValueError("elbow_select needs at least three points")
    ks = np.array([p[0] for p in pts], dtype=float)
    vs = np.array([p[1] for p in pts], dtype=float)
    if np.any(np.diff(ks) <= 0):
        raise ValueError("k must be strictly increasing")
    if not np.all(np.isfinite(vs)):
        raise ValueError("curve values must be finite")
    kx = (ks - ks[0]) / (ks[-1] - ks[0])
    span = vs.max() - vs.min()
    vy = (vs - vs.min()) / span if span > 0 else np.zeros_like(vs)
    dx, dy = kx[-1] - kx[0], vy[-1] - vy[0]
    dist = np.abs(dx * (vy - vy[0]) - dy * (kx - kx[0])) / math.hypot(dx, dy)
    best, best_d = 1, dist[1]
    for i in range(2, len(pts) - 1):
        if dist[i] > best_d + SCORE_TIE:
            best, best_d = i, dist[i]
    return pts[best][0]
