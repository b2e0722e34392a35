import numpy as np
import pytest
from hypothesis import given, strategies as st

from ofc_ensemble.split import (Partition, PartitionError, PartitionPlan, fold_views, make_partition,
                                partition_views)

from conftest import make_table


def table_with_groups(sizes, seed=0):
    pids = [f"p{i}" for i, s in enumerate(sizes) for _ in range(s)]
    n = len(pids)
    rng = np.random.default_rng(seed)
    return make_table(rng.normal(size=(n, 2)), rng.integers(0, 2, n), pids=pids)


def groups_of(t, rows):
    return {t.patient_ids[r] for r in rows}


def test_ten_patients():
    t = table_with_groups([1] * 10)
    p = make_partition(t, PartitionPlan(0.2, 0.2, 3), 0)
    assert len(p.feature_selection_rows) == 2 and len(p.test_rows) == 2
    assert [len(p.fold_rows(f)) for f in range(3)] == [2, 2, 2]
    sets = [set(p.feature_selection_rows), set(p.test_rows), set(p.trainval_rows)]
    assert set.union(*sets) == set(range(10))
    assert sum(len(s) for s in sets) == 10


def test_patient_rows_stay_together():
    t = table_with_groups([3] + [1] * 12)
    for s in range(10):
        p = make_partition(t, PartitionPlan(), s)
        placement = [r in p.feature_selection_rows for r in (0, 1, 2)], [r in p.test_rows for r in (0, 1, 2)]
        assert all(len(set(x)) == 1 for x in placement)
        if 0 in p.fold_assignment:
            assert len({p.fold_assignment[r] for r in (0, 1, 2)}) == 1


def test_deterministic_and_shuffles_differ():
    t = table_with_groups([1, 2] * 15)
    plan = PartitionPlan(seed=42)
    assert make_partition(t, plan, 3).to_manifest() == make_partition(t, plan, 3).to_manifest()
    manifests = {make_partition(t, plan, s).to_manifest() for s in range(10)}
    assert len(manifests) > 1


def test_too_few_patients():
    with pytest.raises(PartitionError, match="too few patients"):
        make_partition(table_with_groups([1] * 4), PartitionPlan(), 0)


@pytest.mark.parametrize("kw", [dict(folds=1), dict(feature_selection_fraction=0.6, test_fraction=0.4),
                                dict(test_fraction=0.0), dict(shuffles=0)])
def test_plan_validation(kw):
    with pytest.raises(ValueError):
        PartitionPlan(**kw)


def test_manifest_roundtrip():
    t = table_with_groups([1, 2, 3] * 6)
    p = make_partition(t, PartitionPlan(), 1)
    assert Partition.from_manifest("# comment\n" + p.to_manifest()) == p


class TestFoldViews:
    def test_sizes_and_disjointness(self):
        t = table_with_groups([1] * 20)
        p = make_partition(t, PartitionPlan(0.2, 0.2, 3), 0)
        sizes = [len(p.fold_rows(f)) for f in range(3)]
        train, val = fold_views(t, p, 0)
        assert val.n_rows == sizes[0] and train.n_rows == sum(sizes) - sizes[0]
        assert not set(train.row_id) & set(val.row_id)
        union = set().union(*(set(fold_views(t, p, f)[1].row_id) for f in range(3)))
        assert union == set(p.trainval_rows)

    def test_unknown_fold(self):
        t = table_with_groups([1] * 20)
        with pytest.raises(KeyError):
            fold_views(t, make_partition(t, PartitionPlan(), 0), 3)

    def test_test_view_is_tainted(self):
        t = table_with_groups([1] * 20)
        fs, tv, test = partition_views(t, make_partition(t, PartitionPlan(), 0))
        assert test.tainted.all() and not fs.tainted.any() and not tv.tainted.any()


@given(st.lists(st.integers(1, 4), min_size=12, max_size=60), st.integers(0, 2**32), st.integers(2, 4),
       st.integers(0, 9))
def test_partition_invariants(sizes, seed, folds, shuffle):
    t = table_with_groups(sizes)
    plan = PartitionPlan(0.2, 0.2, folds, seed=seed)
    try:
        p = make_partition(t, plan, shuffle)
    except PartitionError:
        return
    fs, test, tv = set(p.feature_selection_rows), set(p.test_rows), set(p.trainval_rows)
    assert not (fs & test or fs & tv or test & tv)
    assert fs | test | tv == set(range(t.n_rows))
    g_fs, g_test, g_tv = groups_of(t, fs), groups_of(t, test), groups_of(t, tv)
    assert not (g_fs & g_test or g_fs & g_tv or g_test & g_tv)
    for pid in g_tv:
        rows = [r for r in tv if t.patient_ids[r] == pid]
        assert len({p.fold_assignment[r] for r in rows}) == 1
    fold_sizes = [len(p.fold_rows(f)) for f in range(folds)]
    assert max(fold_sizes) - min(fold_sizes) <= max(sizes)
