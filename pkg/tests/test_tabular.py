import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ofc_ensemble.provenance import LeakageError
from ofc_ensemble.tabular import (ColumnSpec, EmptyTableError, ParseError, Schema, SchemaError, Table, binarize,
                                  drop_incomplete, dump_schema, load_schema, normalize_censored, one_hot,
                                  preprocess, read_csv, standardize_apply, standardize_fit, standardize_invert,
                                  write_csv)

from conftest import make_table

SCHEMA = [ColumnSpec("patient_id", "identifier"), ColumnSpec("peanut_ige", "numeric", "kU/L"),
          ColumnSpec("outcome", "outcome")]


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestReadCsv:
    def test_three_rows(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,outcome\nA,<0.35,pass\nB,>100,fail\nC,2.5,Passed\n")
        t = read_csv(p, SCHEMA)
        assert t.n_rows == 3
        assert t.column("peanut_ige").tolist() == [0.175, 101.0, 2.5]
        assert t.labels.tolist() == [1, 0, 1]

    def test_missing_declared_column_is_named(self, tmp_path):
        schema = SCHEMA + [ColumnSpec("wheal", "numeric", "mm")]
        p = write(tmp_path, "patient_id,peanut_ige,outcome\nA,1,pass\n")
        with pytest.raises(SchemaError, match="wheal"):
            read_csv(p, schema)

    def test_undeclared_column_is_named(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,flare,outcome\nA,1,2,pass\n")
        with pytest.raises(SchemaError, match="flare"):
            read_csv(p, SCHEMA)

    def test_unparseable_token_becomes_missing(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,outcome\nA,abc,pass\nB,1,fail\n")
        t = read_csv(p, SCHEMA)
        assert t.n_rows == 2
        assert math.isnan(t.column("peanut_ige")[0])

    def test_missing_markers(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,outcome\nA,,pass\nB,NA,fail\n")
        assert read_csv(p, SCHEMA).missing_mask().tolist() == [True, True]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_csv(tmp_path / "nope.csv", SCHEMA)

    def test_duplicate_header(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,peanut_ige,outcome\nA,1,1,pass\n")
        with pytest.raises(SchemaError, match="duplicate"):
            read_csv(p, SCHEMA)

    def test_dropped_column_may_be_present(self, tmp_path):
        p = write(tmp_path, "patient_id,peanut_ige,spt_score,outcome\nA,1,9,pass\n")
        t = read_csv(p, Schema(tuple(SCHEMA), drop=("spt_score",)))
        assert t.names == ("patient_id", "peanut_ige", "outcome")

    def test_write_read_roundtrip_with_comments(self, tmp_path):
        t = make_table([[1.5], [np.nan], [3.25]], [1, 0, 1])
        p = tmp_path / "t.csv"
        write_csv(t, p, ["tool 1.0", "seed=3"])
        assert p.read_text().startswith("# tool 1.0\n# seed=3\n")
        back = read_csv(p, t.schema)
        np.testing.assert_array_equal(back.column("f0"), t.column("f0"))
        assert back.labels.tolist() == [1, 0, 1]


class TestTokens:
    @pytest.mark.parametrize("token, value", [("<0.35", 0.175), (">100", 101.0), ("2.5", 2.5), (" <4 ", 2.0)])
    def test_normalize_censored(self, token, value):
        assert normalize_censored(token) == pytest.approx(value, abs=1e-15)

    @pytest.mark.parametrize("token", ["abc", "<", "1.2.3", "<<3", ""])
    def test_malformed_token_names_itself(self, token):
        with pytest.raises(ParseError, match="token"):
            normalize_censored(token)

    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), st.sampled_from(["", "<", ">"]))
    def test_normalize_idempotent_on_outputs(self, x, prefix):
        once = normalize_censored(f"{prefix}{x!r}")
        assert normalize_censored(repr(once)) == once

    @pytest.mark.parametrize("token, value", [("Yes", 1), ("checked", 1), ("NO", 0), ("Unchecked", 0)])
    def test_binarize(self, token, value):
        assert binarize(token) == value

    def test_binarize_rejects_unknown(self):
        with pytest.raises(ParseError, match="maybe"):
            binarize("maybe")


class TestTable:
    def test_needs_one_outcome_and_one_identifier(self):
        with pytest.raises(SchemaError, match="outcome"):
            Table([ColumnSpec("pid", "identifier")], {"pid": ["a"]})
        with pytest.raises(SchemaError, match="identifier"):
            Table([ColumnSpec("y", "outcome")], {"y": [1]})

    def test_unique_names(self):
        with pytest.raises(SchemaError, match="duplicate"):
            Table([ColumnSpec("a", "identifier"), ColumnSpec("a", "outcome")], {"a": [1]})

    def test_outcome_values_restricted(self):
        with pytest.raises(SchemaError):
            make_table([[1.0]], [2])

    def test_columns_are_read_only(self):
        t = make_table([[1.0], [2.0]], [0, 1])
        with pytest.raises(ValueError):
            t.column("f0")[0] = 5.0


class TestDropIncomplete:
    def test_two_missing_rows(self):
        t = make_table([[1], [np.nan], [3], [4], [np.nan]], [1, 0, 1, 0, 1])
        out = drop_incomplete(t)
        assert out.n_rows == 3
        assert out.column("f0").tolist() == [1, 3, 4]

    def test_identity_without_missing(self):
        t = make_table([[1], [2]], [1, 0])
        assert drop_incomplete(t) is t

    def test_all_missing(self):
        with pytest.raises(EmptyTableError):
            drop_incomplete(make_table([[np.nan], [np.nan]], [1, 0]))

    @given(st.lists(st.one_of(st.none(), st.floats(-5, 5)), min_size=1, max_size=30))
    def test_idempotent_and_shrinking(self, values):
        x = [np.nan if v is None else v for v in values]
        t = make_table(x, [i % 2 for i in range(len(x))])
        if all(v is None for v in values):
            with pytest.raises(EmptyTableError):
                drop_incomplete(t)
            return
        once = drop_incomplete(t)
        twice = drop_incomplete(once)
        assert once.n_rows <= t.n_rows and once.names == t.names
        assert not once.missing_mask().any()
        np.testing.assert_array_equal(twice.column("f0"), once.column("f0"))

    def test_preprocess_drops_configured_column(self):
        t = make_table([[1, 2], [3, np.nan]], [1, 0], names=["ige", "score"])
        out = preprocess(t, drop=["score"])
        assert out.names == ("pid", "ige", "outcome") and out.n_rows == 2


def test_one_hot():
    schema = [ColumnSpec("pid", "identifier"), ColumnSpec("race", "categorical"), ColumnSpec("y", "outcome")]
    t = Table(schema, {"pid": ["a", "b", "c"], "race": ["w", "b", None], "y": [1, 0, 1]})
    out = one_hot(t)
    assert out.feature_names() == ("race=b", "race=w")
    assert out.column("race=w")[:2].tolist() == [1.0, 0.0]
    assert math.isnan(out.column("race=w")[2])


def test_schema_document_roundtrip(tmp_path):
    s = Schema(tuple(SCHEMA), drop=("spt_score",))
    dump_schema(s, tmp_path / "s.yaml")
    assert load_schema(tmp_path / "s.yaml") == s


class TestStandardize:
    def test_fit_then_apply(self):
        p = standardize_fit(make_table([[1], [2], [3]], [0, 1, 0]), ["f0"])
        assert p.means == (2.0,) and p.stds == (1.0,)
        out = standardize_apply(make_table([[2]], [1]), p)
        assert out.column("f0").tolist() == [0.0]

    def test_train_mean_zero_and_test_not(self):
        rng = np.random.default_rng(1)
        train = make_table(rng.normal(5, 2, (40, 2)), rng.integers(0, 2, 40))
        test = make_table(rng.normal(8, 2, (40, 2)), rng.integers(0, 2, 40))
        p = standardize_fit(train, ["f0", "f1"])
        z = standardize_apply(train, p).matrix(["f0", "f1"])
        np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0, ddof=1), 1, atol=1e-9)
        assert abs(standardize_apply(test, p).column("f0").mean()) > 0.5

    def test_constant_column_maps_to_zero(self, caplog):
        p = standardize_fit(make_table([[4], [4], [4]], [0, 1, 0]), ["f0"])
        assert p.stds == (0.0,)
        assert "constant" in caplog.text
        assert standardize_apply(make_table([[9]], [1]), p).column("f0").tolist() == [0.0]

    def test_unknown_column(self):
        with pytest.raises(KeyError):
            standardize_fit(make_table([[1], [2]], [0, 1]), ["nope"])

    def test_refuses_held_out_rows(self):
        t = make_table([[1], [2]], [0, 1]).with_taint([False, True])
        with pytest.raises(LeakageError):
            standardize_fit(t, ["f0"])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30).filter(lambda v: np.ptp(v) > 1e-3))
    def test_roundtrip(self, values):
        t = make_table(values, [i % 2 for i in range(len(values))])
        p = standardize_fit(t, ["f0"])
        back = standardize_invert(standardize_apply(t, p), p)
        np.testing.assert_allclose(back.column("f0"), t.column("f0"), atol=1e-9)
