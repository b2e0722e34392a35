"""SMOTE oversampling of the minority class up to class parity."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .provenance import guard
from .rng import stream
from .tabular import FLOAT_KINDS, Table


class SmoteError(ValueError):
    pass


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.k_neighbors) != self.k_neighbors or self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be a positive integer, got {self.k_neighbors}")


def nearest_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``X`` (Euclidean); ties by row index."""
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_enrich(train: Table, cfg: SmoteConfig, features: Sequence[str] | None = None) -> Table:
    """Append synthetic minority rows until both classes are equally frequent.

    Each synthetic row is ``x + u * (nn - x)`` for a uniformly drawn minority row
    ``x``, one of its ``k`` nearest minority neighbours ``nn`` and
    ``u ~ U(0, 1)``, over ``features`` (default: every numeric/binary column).
    Remaining columns are copied from ``x``. Original rows stay first and
    unchanged; synthetic rows carry ``synthetic=True`` and ``row_id=-1``.
    """
    guard("smote", train)
    features = tuple(features) if features is not None else train.feature_names()
    y = train.labels
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SmoteError("SMOTE needs both classes in the training data")
    if counts[0] == counts[1]:
        return train
    minority = classes[int(np.argmin(counts))]
    n_new = int(counts.max() - counts.min())
    idx = np.flatnonzero(y == minority)
    if len(idx) < 2:
        raise SmoteError("SMOTE needs at least two minority rows")

    k = min(cfg.k_neighbors, len(idx) - 1)
    X = train.matrix(features)[idx]
    nn = nearest_neighbors(X, k)
    rng = stream(cfg.seed, "smote")
    base = rng.integers(0, len(idx), size=n_new)
    pick = rng.integers(0, k, size=n_new)
    u = rng.random(n_new)
    partner = nn[base, pick]
    synth = X[base] + u[:, None] * (X[partner] - X[base])

    donors = train.take(idx[base])
    cols = {}
    for spec in train.schema:
        if spec.name in features:
            cols[spec.name] = synth[:, features.index(spec.name)]
        elif spec.kind == "identifier":
            cols[spec.name] = [f"smote-{i}" for i in range(n_new)]
        elif spec.kind in FLOAT_KINDS or spec.kind == "categorical":
            cols[spec.name] = donors.column(spec.name)
    new = Table(train.schema, cols, row_id=np.full(n_new, -1), synthetic=np.ones(n_new, bool),
                tainted=np.zeros(n_new, bool))
    return train.append(new)
