"""Model-agnostic Shapley attributions via kernel-weighted least squares."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import comb

from .rng import stream
from .tabular import FAIL, PASS

log = logging.getLogger(__name__)

EXACT_MAX_FEATURES = 12
DEFAULT_BUDGET = 2048
DEFAULT_BACKGROUND = 100
_EVAL_CHUNK = 200_000


class ShapError(ValueError):
    pass


def shapley_kernel_weight(M: int, s: int) -> float:
    """Kernel weight ``(M-1) / (C(M, s) * s * (M-s))`` of a size-``s`` coalition."""
    if not 0 < s < M:
        raise ValueError(f"weight is infinite for s={s}, M={M}; handled as a constraint")
    return (M - 1) / (comb(M, s, exact=True) * s * (M - s))


@dataclass(frozen=True)
class ShapConfig:
    background: np.ndarray
    coalitions: int | None = None
    seed: int = 0

    def __post_init__(self):
        bg = np.atleast_2d(np.asarray(self.background, dtype=float))
        if bg.size == 0:
            raise ShapError("background set is empty")
        object.__setattr__(self, "background", bg)


def background_sample(X: np.ndarray, size: int = DEFAULT_BACKGROUND, seed: int = 0) -> np.ndarray:
    """Deterministic subsample of at most ``size`` rows, kept in original order."""
    X = np.asarray(X, dtype=float)
    if len(X) <= size:
        return X.copy()
    keep = np.sort(stream(seed, "shap-background").choice(len(X), size=size, replace=False))
    return X[keep]


def _exact_coalitions(M: int):
    masks, weights = [], []
    for s in range(1, M):
        w = shapley_kernel_weight(M, s)
        for subset in itertools.combinations(range(M), s):
            z = np.zeros(M, bool)
            z[list(subset)] = True
            masks.append(z)
            weights.append(w)
    return np.array(masks), np.array(weights)


def _sampled_coalitions(M: int, budget: int, seed: int):
    """Coalitions drawn from the kernel distribution, complements paired.

    Sizes follow ``p(s) ~ (M-1)/(s(M-s))`` and members are uniform given the
    size, so duplicate counts are the regression weights.
    """
    rng = stream(seed, "shap-coalitions")
    sizes = np.arange(1, M)
    p = (M - 1) / (sizes * (M - sizes))
    p = p / p.sum()
    counts: dict[bytes, int] = {}
    order: list[np.ndarray] = []
    for _ in range(budget // 2):
        s = rng.choice(sizes, p=p)
        z = np.zeros(M, bool)
        z[rng.choice(M, size=s, replace=False)] = True
        for mask in (z, ~z):
            key = mask.tobytes()
            if key not in counts:
                counts[key] = 0
                order.append(mask)
            counts[key] += 1
    return np.array(order), np.array([counts[m.tobytes()] for m in order], dtype=float)


def _coalition_values(f, x, background, masks):
    n_bg, M = background.shape
    out = np.empty(len(masks))
    step = max(1, _EVAL_CHUNK // max(1, n_bg * M))
    for start in range(0, len(masks), step):
        z = masks[start:start + step]
        batch = np.where(z[:, None, :], x[None, None, :], background[None, :, :])
        vals = np.asarray(f(batch.reshape(-1, M)), dtype=float).reshape(len(z), n_bg)
        out[start:start + step] = vals.mean(axis=1)
    return out


def explain(model: Callable[[np.ndarray], np.ndarray], x, cfg: ShapConfig) -> tuple[float, np.ndarray]:
    """Return ``(phi0, phi)`` for the scoring function ``model`` at ``x``.

    Absent features take background values and the score is averaged over the
    background. ``phi0`` is the mean background score and ``phi0 + sum(phi)``
    equals ``model(x)`` by construction. All ``2**M - 2`` coalitions are
    enumerated when ``M <= 12`` and the budget does not say otherwise.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    bg = cfg.background
    M = len(x)
    if bg.shape[1] != M:
        raise ShapError(f"background has {bg.shape[1]} features, x has {M}")
    fx = float(np.asarray(model(x.reshape(1, -1)), dtype=float)[0])
    phi0 = float(np.mean(model(bg)))
    delta = fx - phi0
    if M == 1:
        return phi0, np.array([delta])

    full = 2**M - 2
    budget = cfg.coalitions
    if budget is None:
        budget = full if M <= EXACT_MAX_FEATURES else DEFAULT_BUDGET
    if budget < min(full, M + 2):
        raise ShapError(f"coalition budget {budget} too small for {M} features (need >= {M + 2})")
    if budget >= full:
        masks, weights = _exact_coalitions(M)
    else:
        masks, weights = _sampled_coalitions(M, budget, cfg.seed)

    v = _coalition_values(model, x, bg, masks) - phi0
    Z = masks.astype(float)
    # eliminate the last feature through the efficiency constraint sum(phi) = delta
    A = Z[:, :-1] - Z[:, -1:]
    b = v - Z[:, -1] * delta
    sw = np.sqrt(weights)
    sol, _, rank, _ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    if rank < M - 1:
        log.warning("kernel SHAP system is rank deficient (%d < %d); using the minimum-norm solution",
                    rank, M - 1)
    phi = np.append(sol, delta - sol.sum())
    return phi0, phi


@dataclass(frozen=True)
class ShapRow:
    feature: str
    mean_abs: float
    mean_abs_pass: float | None
    mean_abs_fail: float | None


@dataclass(frozen=True)
class ShapSummary:
    rows: tuple[ShapRow, ...]
    n_samples: int
    n_pass: int
    n_fail: int

    @property
    def empty_classes(self) -> tuple[str, ...]:
        return tuple(name for name, n in (("pass", self.n_pass), ("fail", self.n_fail)) if n == 0)


def aggregate_shap(phis, true_labels, features: Sequence[str]) -> ShapSummary:
    """Mean |phi| per feature overall and within each true class, largest first."""
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    labels = np.asarray(true_labels)
    if phis.shape[0] == 0:
        raise ValueError("no explained samples")
    if phis.shape[0] != len(labels) or phis.shape[1] != len(features):
        raise ValueError("shape mismatch between attributions, labels and features")
    a = np.abs(phis)
    groups = {c: a[labels == c] for c in (PASS, FAIL)}
    rows = []
    for j, f in enumerate(features):
        per = {c: (float(g[:, j].mean()) if len(g) else None) for c, g in groups.items()}
        rows.append(ShapRow(f, float(a[:, j].mean()), per[PASS], per[FAIL]))
    order = sorted(range(len(rows)), key=lambda j: (-rows[j].mean_abs, j))
    return ShapSummary(tuple(rows[j] for j in order), len(labels), len(groups[PASS]), len(groups[FAIL]))

