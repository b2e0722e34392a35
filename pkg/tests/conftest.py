from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ofc_ensemble.tabular import ColumnSpec, Table

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def make_table(X, y, pids=None, names=None, kinds=None) -> Table:
    """Table from a feature matrix and 0/1 labels; one row per patient unless ``pids`` given."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    names = list(names) if names is not None else [f"f{j}" for j in range(d)]
    kinds = list(kinds) if kinds is not None else ["numeric"] * d
    pids = list(pids) if pids is not None else [f"p{i}" for i in range(n)]
    schema = [ColumnSpec("pid", "identifier")] + [ColumnSpec(nm, k) for nm, k in zip(names, kinds)]
    schema.append(ColumnSpec("outcome", "outcome"))
    cols = {"pid": pids, "outcome": np.asarray(y, dtype=float)}
    cols.update({nm: X[:, j] for j, nm in enumerate(names)})
    return Table(schema, cols)


@pytest.fixture
def blobs():
    """Two Gaussian blobs 6 sd apart, 50 rows each, 3 features."""
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(0, 1, (50, 3)), rng.normal(6, 1, (50, 3))])
    y = np.array([0] * 50 + [1] * 50)
    return X, y


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
