"""Column-typed tables, CSV ingestion and the clinical preprocessing rules."""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .provenance import guard

log = logging.getLogger(__name__)

KINDS = ("numeric", "binary", "categorical", "identifier", "outcome")
FLOAT_KINDS = ("numeric", "binary", "outcome")
PASS, FAIL = 1, 0
MISSING_TOKENS = ("", "NA")

_OUTCOME_TOKENS = {"pass": PASS, "passed": PASS, "fail": FAIL, "failed": FAIL}
_BINARY_TOKENS = {"yes": 1, "checked": 1, "no": 0, "unchecked": 0, "1": 1, "0": 0}
_CENSORED = re.compile(r"^\s*([<>])?\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$")


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class EmptyTableError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    unit: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r} (expected one of {KINDS})")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Table:
    """An immutable table with per-row provenance.

    Float kinds (numeric, binary, outcome) are stored as float64 with NaN for
    missing; identifier and categorical columns are object arrays with None.
    Outcome is encoded 1 = pass (positive class), 0 = fail.

    ``row_id`` is the row's index in the originally loaded table (-1 for
    synthetic rows), ``synthetic`` marks SMOTE output and ``tainted`` marks
    held-out rows that fitting steps must never see.
    """

    def __init__(self, schema: Sequence[ColumnSpec], columns: Mapping[str, Sequence],
                 row_id=None, synthetic=None, tainted=None):
        schema = tuple(schema)
        names = [c.name for c in schema]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names: {dupes}")
        for kind in ("outcome", "identifier"):
            count = sum(c.kind == kind for c in schema)
            if count != 1:
                raise SchemaError(f"table needs exactly one {kind} column, found {count}")
        missing = [n for n in names if n not in columns]
        if missing:
            raise SchemaError(f"no data for columns {missing}")

        cols = {}
        n = None
        for spec in schema:
            raw = columns[spec.name]
            if spec.kind in FLOAT_KINDS:
                arr = np.array(raw, dtype=float)
            else:
                arr = np.empty(len(raw), dtype=object)
                arr[:] = list(raw)
            if arr.ndim != 1:
                raise SchemaError(f"column {spec.name!r} must be one-dimensional")
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise SchemaError(f"column {spec.name!r} has {len(arr)} values, expected {n}")
            if spec.kind == "outcome":
                bad = ~np.isnan(arr) & (arr != PASS) & (arr != FAIL)
                if bad.any():
                    raise SchemaError(f"outcome column {spec.name!r} holds values other than pass/fail")
            cols[spec.name] = _frozen(arr)
        n = n or 0

        self.schema = schema
        self._columns = cols
        self._specs = {c.name: c for c in schema}
        self.row_id = _frozen(np.arange(n) if row_id is None else np.asarray(row_id, dtype=int).copy())
        self.synthetic = _frozen(np.zeros(n, bool) if synthetic is None else np.asarray(synthetic, dtype=bool).copy())
        self.tainted = _frozen(np.zeros(n, bool) if tainted is None else np.asarray(tainted, dtype=bool).copy())
        if not (len(self.row_id) == len(self.synthetic) == len(self.tainted) == n):
            raise SchemaError("row metadata length does not match the columns")

    # -- access -----------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return len(self.row_id)

    def __len__(self) -> int:
        return self.n_rows

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema)

    def spec(self, name: str) -> ColumnSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        self.spec(name)
        return self._columns[name]

    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._columns)

    @property
    def outcome_name(self) -> str:
        return next(c.name for c in self.schema if c.kind == "outcome")

    @property
    def identifier_name(self) -> str:
        return next(c.name for c in self.schema if c.kind == "identifier")

    @property
    def labels(self) -> np.ndarray:
        y = self.column(self.outcome_name)
        if np.isnan(y).any():
            raise ValueError("outcome has missing values; run drop_incomplete first")
        return y.astype(int)

    @property
    def patient_ids(self) -> np.ndarray:
        return self.column(self.identifier_name)

    def feature_names(self) -> tuple[str, ...]:
        """Columns usable as model inputs, in schema order."""
        return tuple(c.name for c in self.schema if c.kind in ("numeric", "binary"))

    def matrix(self, features: Sequence[str]) -> np.ndarray:
        for f in features:
            if self.spec(f).kind not in ("numeric", "binary"):
                raise ValueError(f"column {f!r} is {self.spec(f).kind}, not a model feature")
        if not features:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self._columns[f] for f in features]).astype(float)

    def missing_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_rows, bool)
        for spec in self.schema:
            col = self._columns[spec.name]
            if spec.kind in FLOAT_KINDS:
                mask |= np.isnan(col)
            else:
                mask |= np.array([v is None for v in col], dtype=bool)
        return mask

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.n_rows):
            rec = {}
            for spec in self.schema:
                v = self._columns[spec.name][i]
                if spec.kind in FLOAT_KINDS:
                    v = None if math.isnan(v) else float(v)
                rec[spec.name] = v
            out.append(rec)
        return out

    # -- derivation -------------------------------------------------------
    def take(self, indices) -> "Table":
        idx = np.asarray(indices, dtype=int)
        return Table(self.schema, {k: v[idx] for k, v in self._columns.items()},
                     self.row_id[idx], self.synthetic[idx], self.tainted[idx])

    def replace(self, schema=None, columns=None, **meta) -> "Table":
        cols = dict(self._columns)
        if columns:
            cols.update(columns)
        return Table(schema or self.schema, cols,
                     meta.get("row_id", self.row_id), meta.get("synthetic", self.synthetic),
                     meta.get("tainted", self.tainted))

    def with_taint(self, mask) -> "Table":
        return self.replace(tainted=self.tainted | np.asarray(mask, dtype=bool))

    def append(self, other: "Table") -> "Table":
        if other.schema != self.schema:
            raise SchemaError("cannot append tables with different schemas")
        cols = {k: np.concatenate([v, other._columns[k]]) for k, v in self._columns.items()}
        return Table(self.schema, cols,
                     np.concatenate([self.row_id, other.row_id]),
                     np.concatenate([self.synthetic, other.synthetic]),
                     np.concatenate([self.tainted, other.tainted]))

    def drop_columns(self, names: Iterable[str]) -> "Table":
        names = set(names)
        for n in names:
            if self.spec(n).kind in ("outcome", "identifier"):
                raise SchemaError(f"cannot drop the {self.spec(n).kind} column {n!r}")
        schema = [c for c in self.schema if c.name not in names]
        return Table(schema, {c.name: self._columns[c.name] for c in schema},
                     self.row_id, self.synthetic, self.tainted)

    def __repr__(self) -> str:
        return f"Table({self.n_rows} rows, {len(self.schema)} columns)"


# -- schema documents ------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]
    drop: tuple[str, ...] = ()


def load_schema(path) -> Schema:
    """Read a schema document (YAML or JSON) with ``columns`` and optional ``drop``."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: not a valid key-value document ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("columns"), list):
        raise SchemaError(f"{path}: expected a mapping with a 'columns' list")
    cols = []
    for entry in doc["columns"]:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise SchemaError(f"{path}: every column needs 'name' and 'kind', got {entry!r}")
        cols.append(ColumnSpec(str(entry["name"]), str(entry["kind"]), entry.get("unit")))
    return Schema(tuple(cols), tuple(str(d) for d in doc.get("drop") or ()))


def dump_schema(schema: Schema, path) -> None:
    doc = {"columns": [{k: v for k, v in (("name", c.name), ("kind", c.kind), ("unit", c.unit)) if v is not None}
                       for c in schema.columns]}
    if schema.drop:
        doc["drop"] = list(schema.drop)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


# -- token parsing -----------------------------------------------------------

def normalize_censored(token: str) -> float:
    """Parse a lab value, resolving censored notation.

    ``"<x"`` becomes ``x/2`` and ``">x"`` becomes ``x + 1``; a plain number is
    returned as is.

    >>> normalize_censored("<0.35"), normalize_censored(">100")
    (0.175, 101.0)
    """
    if isinstance(token, (int, float)) and not isinstance(token, bool):
        return float(token)
    m = _CENSORED.match(str(token))
    if not m:
        raise ParseError(f"cannot parse numeric token {token!r}")
    value = float(m.group(2))
    if not math.isfinite(value):
        raise ParseError(f"non-finite numeric token {token!r}")
    if m.group(1) == "<":
        return value / 2
    if m.group(1) == ">":
        return value + 1
    return value


def binarize(token: str) -> int:
    """Yes/Checked -> 1, No/Unchecked -> 0 (case-insensitive)."""
    try:
        return _BINARY_TOKENS[str(token).strip().lower()]
    except KeyError:
        raise ParseError(f"cannot parse binary token {token!r}") from None


def parse_outcome(token: str) -> int:
    try:
        return _OUTCOME_TOKENS[str(token).strip().lower()]
    except KeyError:
        raise ParseError(f"cannot parse outcome token {token!r}") from None


def _parse_cell(token: str, kind: str):
    if token.strip() in MISSING_TOKENS:
        return math.nan if kind in FLOAT_KINDS else None
    try:
        if kind == "numeric":
            return normalize_censored(token)
        if kind == "binary":
            return float(binarize(token))
        if kind == "outcome":
            return float(parse_outcome(token))
    except ParseError:
        return math.nan
    return token.strip()


# -- CSV ---------------------------------------------------------------------

def read_csv(path, schema: Sequence[ColumnSpec] | Schema, drop: Iterable[str] = ()) -> Table:
    """Load a CSV file, parsing each cell according to its column kind.

    Unparseable cells become missing. Columns listed in ``drop`` may appear in
    the file and are discarded.
    """
    if isinstance(schema, Schema):
        drop = tuple(drop) + schema.drop
        schema = schema.columns
    schema = tuple(schema)
    drop = set(drop)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        lines = list(fh)
        while lines and lines[0].startswith("#"):
            lines.pop(0)
        reader = csv.reader(lines)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        body = list(reader)

    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise SchemaError(f"{path}: duplicate header names {dupes}")
    expected = [c.name for c in schema]
    absent = [n for n in expected if n not in header]
    extra = [h for h in header if h not in expected and h not in drop]
    if absent or extra:
        parts = []
        if absent:
            parts.append(f"missing declared columns {absent}")
        if extra:
            parts.append(f"undeclared columns {extra}")
        raise SchemaError(f"{path}: header does not match schema: " + "; ".join(parts))

    position = {h: i for i, h in enumerate(header)}
    columns = {c.name: [] for c in schema}
    for lineno, record in enumerate(body, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(record)}")
        for c in schema:
            columns[c.name].append(_parse_cell(record[position[c.name]], c.kind))
    return Table(schema, columns)


def _format_cell(value, kind: str) -> str:
    if kind in FLOAT_KINDS:
        if math.isnan(value):
            return "NA"
        if kind == "outcome":
            return "pass" if value == PASS else "fail"
        if kind == "binary" and value in (0.0, 1.0):
            return str(int(value))
        return repr(float(value))
    return "NA" if value is None else str(value)


def write_csv(table: Table, path, comments: Sequence[str] = ()) -> None:
    """Write ``table`` as CSV. ``comments`` become leading ``#`` lines."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.names)
        cols = [(table.column(c.name), c.kind) for c in table.schema]
        for i in range(table.n_rows):
            writer.writerow([_format_cell(col[i], kind) for col, kind in cols])


def strip_comments(path) -> str:
    """Return file content without leading ``#`` provenance lines."""
    lines = Path(path).read_text(encoding="utf-8").splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith("#"))


# -- preprocessing -----------------------------------------------------------

def drop_incomplete(t: Table) -> Table:
    mask = t.missing_mask()
    if not mask.any():
        return t
    if mask.all():
        raise EmptyTableError("every row has at least one missing value")
    return t.take(np.flatnonzero(~mask))


def one_hot(t: Table) -> Table:
    """Replace categorical columns with ``name=token`` binary indicator columns."""
    if not any(c.kind == "categorical" for c in t.schema):
        return t
    schema, cols = [], {}
    for spec in t.schema:
        col = t.column(spec.name)
        if spec.kind != "categorical":
            schema.append(spec)
            cols[spec.name] = col
            continue
        present = np.array([v is not None for v in col])
        for token in sorted({v for v in col if v is not None}):
            name = f"{spec.name}={token}"
            ind = np.where(present, (col == token).astype(float), np.nan)
            schema.append(ColumnSpec(name, "binary"))
            cols[name] = ind
    return Table(schema, cols, t.row_id, t.synthetic, t.tainted)


def preprocess(t: Table, drop: Iterable[str] = ()) -> Table:
    """Drop configured columns, then rows with missing values."""
    drop = [d for d in drop if d in t.names]
    if drop:
        t = t.drop_columns(drop)
    return drop_incomplete(t)


def align_features(t: Table, features: Sequence[str]) -> np.ndarray:
    """Feature matrix for ``features``; absent one-hot indicators read as 0."""
    cols = []
    for f in features:
        if f in t.names:
            cols.append(t.matrix([f])[:, 0])
        elif "=" in f and f.split("=", 1)[0] in t.names:
            base, token = f.split("=", 1)
            raw = t.column(base)
            cols.append(np.array([1.0 if v == token else 0.0 for v in raw]))
        elif "=" in f:
            cols.append(np.zeros(t.n_rows))
        else:
            raise KeyError(f"feature {f!r} not present in the data")
    return np.column_stack(cols) if cols else np.empty((t.n_rows, 0))


# -- standardization ----------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    columns: tuple[str, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def transform(self, X: np.ndarray, features: Sequence[str]) -> np.ndarray:
        """Standardize the matching columns of a feature matrix in ``features`` order."""
        X = np.array(X, dtype=float, copy=True)
        index = {f: j for j, f in enumerate(features)}
        for name, mu, sd in zip(self.columns, self.means, self.stds):
            j = index.get(name)
            if j is None:
                continue
            X[:, j] = 0.0 if sd == 0 else (X[:, j] - mu) / sd
        return X

    def as_dict(self) -> dict:
        return {"columns": list(self.columns), "means": list(self.means), "stds": list(self.stds)}


def standardize_fit(t: Table, numeric_columns: Iterable[str]) -> ScalerParams:
    """Per-column mean and sample standard deviation (n - 1 divisor)."""
    guard("scaler_fit", t)
    names = tuple(numeric_columns)
    means, stds = [], []
    for name in names:
        if name not in t.names:
            raise KeyError(f"unknown column {name!r}")
        if t.spec(name).kind not in ("numeric", "binary"):
            raise ValueError(f"column {name!r} is not numeric")
        x = t.column(name)
        x = x[~np.isnan(x)]
        mu = float(x.mean()) if len(x) else 0.0
        sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
        if sd == 0.0 or not math.isfinite(sd):
            log.warning("column %r is constant in the fitting data; it will standardize to 0", name)
            sd = 0.0
        means.append(mu)
        stds.append(sd)
    return ScalerParams(names, tuple(means), tuple(stds))


def standardize_apply(t: Table, p: ScalerParams) -> Table:
    for name in p.columns:
        if name not in t.names:
            raise KeyError(f"unknown column {name!r}")
    cols = {}
    for name, mu, sd in zip(p.columns, p.means, p.stds):
        x = t.column(name)
        cols[name] = np.where(np.isnan(x), np.nan, 0.0) if sd == 0 else (x - mu) / sd
    return t.replace(columns=cols)


def standardize_invert(t: Table, p: ScalerParams) -> Table:
    """Undo :func:`standardize_apply` for non-constant columns."""
    cols = {name: t.column(name) * sd + mu for name, mu, sd in zip(p.columns, p.means, p.stds) if sd != 0}
    return t.replace(columns=cols)
