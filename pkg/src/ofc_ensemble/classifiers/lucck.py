"""Learning Using Concave and Convex Kernels.

Per-feature kernels ``(1 + lambda * d**2) ** -theta`` are multiplied across
features into a similarity, summed over each class's training vectors into an
affinity, and a sample is assigned to the class of largest affinity.

Affinities are handled in log space internally: with large ``theta`` every
similarity underflows to zero long before the class ordering is lost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, logsumexp

from ..tabular import FAIL, PASS

_CHUNK = 2_000_000


def _check_positive(lam, theta) -> None:
    if np.any(np.asarray(lam, dtype=float) <= 0) or np.any(np.asarray(theta, dtype=float) <= 0):
        raise ValueError("lambda and theta must be > 0")


def lucck_kernel(x, lam, theta):
    """``(1 + lam * x**2) ** -theta``."""
    _check_positive(lam, theta)
    x = np.asarray(x, dtype=float)
    out = np.power(1.0 + lam * x * x, -np.asarray(theta, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LucckParams:
    """Kernel hyperparameters plus the stored training vectors of each class.

    ``lam`` and ``theta`` are scalars shared by every feature or length-n
    vectors with one entry per feature.
    """
    lam: float | np.ndarray
    theta: float | np.ndarray
    classes: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        _check_positive(self.lam, self.theta)
        dims = {v.shape[1] for v in self.classes.values()}
        if len(dims) > 1:
            raise ValueError("class sample sets disagree on dimension")
        for name in ("lam", "theta"):
            v = np.asarray(getattr(self, name))
            if v.ndim == 1 and dims and v.shape[0] != next(iter(dims)):
                raise ValueError(f"{name} has {v.shape[0]} entries for {next(iter(dims))} features")

    @property
    def dim(self) -> int | None:
        return next(iter(self.classes.values())).shape[1] if self.classes else None


def _log_similarity(X: np.ndarray, Y: np.ndarray, lam, theta) -> np.ndarray:
    """Matrix of log Q(x - y) for every row pair, shape (len(X), len(Y))."""
    lam = np.asarray(lam, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, m, d = len(X), len(Y), X.shape[1]
    out = np.empty((n, m))
    step = max(1, _CHUNK // max(1, m * d))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - Y[None, :, :]
        out[start:start + step] = -(theta * np.log1p(lam * diff * diff)).sum(axis=2)
    return out


def lucck_similarity(x, y, p: LucckParams) -> float:
    """``prod_i (1 + lam_i * (x_i - y_i)**2) ** -theta_i``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if p.dim is not None and x.shape[0] != p.dim:
        raise ValueError(f"dimension mismatch: vectors have {x.shape[0]}, model has {p.dim}")
    return float(np.prod(lucck_kernel(x - y, p.lam, p.theta)))


def lucck_class_affinity(x, class_k, p: LucckParams) -> float:
    """Sum of similarities between ``x`` and each member of ``class_k``."""
    Y = np.atleast_2d(np.asarray(class_k, dtype=float))
    if Y.size == 0:
        raise ValueError("empty class sample set")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {Y.shape[1]}")
    return float(np.exp(_log_similarity(x, Y, p.lam, p.theta)).sum())


def log_affinities(X: np.ndarray, p: LucckParams) -> dict[int, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != p.dim:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {p.dim}")
    return {k: logsumexp(_log_similarity(X, Y, p.lam, p.theta), axis=1) for k, Y in p.classes.items()}


class LucckClassifier:
    """Binary LUCCK; ``decision`` is the pass share of total affinity."""

    threshold = 0.5

    def __init__(self, lam=1.0, theta=1.0):
        _check_positive(lam, theta)
        self.lam = lam
        self.theta = theta
        self.params_: LucckParams | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LucckClassifier":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.params_ = LucckParams(self.lam, self.theta, {FAIL: X[y == FAIL].copy(), PASS: X[y == PASS].copy()})
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        if self.params_ is None:
            raise RuntimeError("LUCCK model is not fitted")
        logr = log_affinities(X, self.params_)
        return expit(logr[PASS] - logr[FAIL])


def lucck_predict(x, model) -> tuple[int, float]:
    """Label and pass-share score for one vector; ties go to pass."""
    s = float(model.score(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return (PASS if s >= LucckClassifier.threshold else FAIL), s
