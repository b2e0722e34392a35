"""Patient-wise partitioning into feature-selection, train/validation folds and test."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .rng import stream
from .tabular import Table

FEATURE_SELECTION = "feature_selection"
TEST = "test"
TRAINVAL = "trainval"


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionPlan:
    feature_selection_fraction: float = 0.2
    test_fraction: float = 0.2
    folds: int = 3
    shuffles: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("feature_selection_fraction", "test_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.feature_selection_fraction + self.test_fraction >= 1:
            raise ValueError("feature_selection_fraction + test_fraction must be < 1")
        if int(self.folds) != self.folds or self.folds < 2:
            raise ValueError(f"folds must be an integer >= 2, got {self.folds}")
        if int(self.shuffles) != self.shuffles or self.shuffles < 1:
            raise ValueError(f"shuffles must be a positive integer, got {self.shuffles}")


@dataclass(frozen=True)
class Partition:
    feature_selection_rows: tuple[int, ...]
    test_rows: tuple[int, ...]
    fold_assignment: Mapping[int, int]
    folds: int

    @property
    def trainval_rows(self) -> tuple[int, ...]:
        return tuple(sorted(self.fold_assignment))

    def fold_rows(self, fold: int) -> tuple[int, ...]:
        if not 0 <= fold < self.folds:
            raise KeyError(f"unknown fold {fold} (partition has {self.folds})")
        return tuple(r for r in self.trainval_rows if self.fold_assignment[r] == fold)

    def to_manifest(self) -> str:
        """One ``row<TAB>set<TAB>fold`` line per row, sorted by row index."""
        entries = [(r, FEATURE_SELECTION, "-") for r in self.feature_selection_rows]
        entries += [(r, TEST, "-") for r in self.test_rows]
        entries += [(r, TRAINVAL, str(f)) for r, f in self.fold_assignment.items()]
        lines = ["row\tset\tfold"] + [f"{r}\t{s}\t{f}" for r, s, f in sorted(entries)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "Partition":
        fs, test, folds = [], [], {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#") or line.startswith("row\t"):
                continue
            r, s, f = line.split("\t")
            if s == FEATURE_SELECTION:
                fs.append(int(r))
            elif s == TEST:
                test.append(int(r))
            else:
                folds[int(r)] = int(f)
        n_folds = max(folds.values()) + 1 if folds else 0
        return cls(tuple(fs), tuple(test), dict(sorted(folds.items())), n_folds)


def _patient_groups(t: Table) -> list[list[int]]:
    groups: dict[object, list[int]] = {}
    for i, pid in enumerate(t.patient_ids):
        groups.setdefault(pid, []).append(i)
    return list(groups.values())


def make_partition(t: Table, plan: PartitionPlan, shuffle_index: int) -> Partition:
    """Assign whole patients to feature-selection, test and the CV folds.

    Patients are shuffled with the ``(seed, shuffle_index)`` stream, stably
    sorted largest-first and each placed in the bin that is furthest below its
    row target (lowest bin index on ties).
    """
    groups = _patient_groups(t)
    rng = stream(plan.seed, "partition", shuffle_index)
    order = rng.permutation(len(groups))
    order = sorted(order, key=lambda g: -len(groups[g]))  # stable: shuffled order breaks size ties

    trainval_fraction = 1.0 - plan.feature_selection_fraction - plan.test_fraction
    fractions = [plan.feature_selection_fraction, plan.test_fraction] + [trainval_fraction / plan.folds] * plan.folds
    targets = np.array(fractions) * t.n_rows
    filled = np.zeros(len(fractions))
    bins: list[list[int]] = [[] for _ in fractions]
    patients = np.zeros(len(fractions), dtype=int)
    for g in order:
        b = int(np.argmin(filled / targets))
        bins[b].extend(groups[g])
        filled[b] += len(groups[g])
        patients[b] += 1

    fold_patients = patients[2:]
    if (fold_patients == 0).any() or patients[0] == 0 or patients[1] == 0:
        raise PartitionError(
            f"too few patients ({len(groups)}) to populate feature-selection, test and {plan.folds} folds")

    assignment = {}
    for fold, rows in enumerate(bins[2:]):
        for r in rows:
            assignment[r] = fold
    return Partition(tuple(sorted(bins[0])), tuple(sorted(bins[1])),
                     dict(sorted(assignment.items())), plan.folds)


def partition_views(t: Table, p: Partition) -> tuple[Table, Table, Table]:
    """(feature_selection, trainval, test) tables; test rows come back tainted."""
    test = t.take(p.test_rows)
    return t.take(p.feature_selection_rows), t.take(p.trainval_rows), test.with_taint(np.ones(len(test), bool))


def fold_views(t: Table, p: Partition, fold: int) -> tuple[Table, Table]:
    """Train/validation views of fold ``fold``; ``t`` is the full table the partition indexes."""
    validation = p.fold_rows(fold)
    held = set(validation)
    train = [r for r in p.trainval_rows if r not in held]
    return t.take(train), t.take(validation)
