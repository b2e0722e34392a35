"""Row taint tracking for leakage guards.

Test rows are tainted before any slicing happens, so every derived table keeps
the flag. Fitting steps call :func:`guard` which refuses tainted input and, when
an :func:`audit` block is active, records what each stage consumed.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

STAGES = ("scaler_fit", "smote", "mutual_information", "hyperparameter_search", "model_fit")

_recorder: contextvars.ContextVar[list | None] = contextvars.ContextVar("ofc_audit", default=None)


class LeakageError(RuntimeError):
    """A fitting stage was handed rows flagged as held-out."""


@dataclass(frozen=True)
class AuditEntry:
    stage: str
    rows: int
    synthetic: int
    tainted: int
    row_ids: tuple[int, ...]


def guard(stage: str, table) -> None:
    tainted = int(table.tainted.sum())
    entries = _recorder.get()
    if entries is not None:
        ids = tuple(int(i) for i in table.row_id[~table.synthetic])
        entries.append(AuditEntry(stage, table.n_rows, int(table.synthetic.sum()), tainted, ids))
    if tainted:
        raise LeakageError(f"{stage}: {tainted} held-out row(s) reached a fitting step")


@contextlib.contextmanager
def audit():
    """Collect :class:`AuditEntry` records for guards hit inside the block."""
    entries: list[AuditEntry] = []
    token = _recorder.set(entries)
    try:
        yield entries
    finally:
        _recorder.reset(token)
