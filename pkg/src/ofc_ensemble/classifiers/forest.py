"""Bagged decision trees with the Table-3 style hyperparameters."""
from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from ..rng import seed_sequence

log = logging.getLogger(__name__)

CRITERIA = {"gini": "gini", "information_gain": "entropy", "entropy": "entropy"}


def resolve_max_splits(max_splits, n_samples: int) -> int:
    """``"N"`` -> training size, ``"log2N"`` -> floor(log2 N), ints pass through."""
    if max_splits == "N":
        return max(1, n_samples)
    if max_splits == "log2N":
        return max(1, int(math.floor(math.log2(max(n_samples, 2)))))
    value = int(max_splits)
    if value < 1:
        raise ValueError(f"max_splits must be >= 1, got {max_splits}")
    return value


class RandomForest:
    """Forest whose ``decision`` is the fraction of trees voting pass.

    Tree ``i`` draws its bootstrap sample and split randomness from the seed
    stream ``(seed, i)`` alone, so the first ``n`` trees of a larger forest are
    exactly the forest of ``n`` trees; :meth:`truncated` exploits this.
    """

    threshold = 0.5

    def __init__(self, n_trees=100, criterion="gini", min_leaf=1, max_features=None,
                 max_splits="N", bootstrap=True, seed=0):
        if criterion not in CRITERIA:
            raise ValueError(f"unknown split criterion {criterion!r}")
        if int(n_trees) < 1 or int(min_leaf) < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        if max_features is not None and int(max_features) < 1:
            raise ValueError("max_features must be >= 1")
        self.n_trees = int(n_trees)
        self.criterion = criterion
        self.min_leaf = int(min_leaf)
        self.max_features = max_features
        self.max_splits = max_splits
        self.bootstrap = bool(bootstrap)
        self.seed = int(seed)
        self.trees_: list[DecisionTreeClassifier] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        n, d = X.shape
        m = d if self.max_features is None else int(self.max_features)
        if m > d:
            log.warning("variables per split %d exceeds %d features; clamped", m, d)
            m = d
        leaves = resolve_max_splits(self.max_splits, n) + 1
        self.trees_ = []
        for i in range(self.n_trees):
            rng = np.random.Generator(np.random.PCG64(seed_sequence(self.seed, "tree", i)))
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = DecisionTreeClassifier(criterion=CRITERIA[self.criterion], min_samples_leaf=self.min_leaf,
                                          max_features=m, max_leaf_nodes=max(2, leaves),
                                          random_state=int(rng.integers(2**31 - 1)))
            tree.fit(X[rows], y[rows])
            self.trees_.append(tree)
        return self

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_samples) matrix of 0/1 pass votes."""
        if not self.trees_:
            raise RuntimeError("random forest is not fitted")
        X = np.asarray(X, dtype=float)
        return np.vstack([t.predict(X) for t in self.trees_]).astype(float)

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X).mean(axis=0)

    def truncated(self, n_trees: int) -> "RandomForest":
        if not 1 <= n_trees <= len(self.trees_):
            raise ValueError(f"cannot take {n_trees} trees from a forest of {len(self.trees_)}")
        out = RandomForest(n_trees, self.criterion, self.min_leaf, self.max_features, self.max_splits,
                           self.bootstrap, self.seed)
        out.trees_ = self.trees_[:n_trees]
        return out
