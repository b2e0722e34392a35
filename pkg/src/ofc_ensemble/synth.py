"""Synthetic OFC-like cohorts with known ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .rng import stream
from .tabular import FAIL, PASS, ColumnSpec, Schema, Table, dump_schema, write_csv


@dataclass(frozen=True)
class SynthSpec:
    patients: int = 500
    ofcs_per_patient: tuple[int, int] = (1, 2)
    informative_features: int = 6
    separation: float = 4.0
    noise_features: int = 10
    binary_comorbidities: int = 0
    comorbidity_rates: tuple[float, float] = (0.15, 0.45)
    positive_rate: float = 0.86
    seed: int = 0

    def __post_init__(self):
        if self.patients < 1:
            raise ValueError("patients must be >= 1")
        lo, hi = self.ofcs_per_patient
        if not 1 <= lo <= hi:
            raise ValueError(f"ofcs_per_patient must satisfy 1 <= min <= max, got {self.ofcs_per_patient}")
        if self.informative_features < 1:
            raise ValueError("at least one informative feature is required")
        if self.noise_features < 0 or self.binary_comorbidities < 0:
            raise ValueError("feature counts must be non-negative")
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must lie in (0, 1)")
        if not all(0 <= r <= 1 for r in self.comorbidity_rates):
            raise ValueError("comorbidity rates must be probabilities")

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown synth keys {sorted(extra)}")
        doc = dict(doc)
        for key in ("ofcs_per_patient", "comorbidity_rates"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def informative_names(spec: SynthSpec) -> list[str]:
    return [f"signal_{i + 1:02d}" for i in range(spec.informative_features)]


def comorbidity_names(spec: SynthSpec) -> list[str]:
    return [f"condition_{i + 1:02d}" for i in range(spec.binary_comorbidities)]


def noise_names(spec: SynthSpec) -> list[str]:
    return [f"noise_{i + 1:02d}" for i in range(spec.noise_features)]


def schema_for(spec: SynthSpec) -> Schema:
    cols = [ColumnSpec("patient_id", "identifier")]
    cols += [ColumnSpec(n, "numeric", "sd") for n in informative_names(spec)]
    cols += [ColumnSpec(n, "binary") for n in comorbidity_names(spec)]
    cols += [ColumnSpec(n, "numeric", "sd") for n in noise_names(spec)]
    cols.append(ColumnSpec("outcome", "outcome"))
    return Schema(tuple(cols))


def generate(spec: SynthSpec) -> Table:
    """Draw a cohort: each OFC gets a Bernoulli outcome, then class-conditional features.

    Informative features are unit-variance Gaussians whose means differ by
    ``separation`` between classes (sign alternating by feature); comorbidities
    are Bernoulli with rate ``comorbidity_rates[0]`` for pass and ``[1]`` for
    fail; noise features ignore the outcome.
    """
    rng = stream(spec.seed, "synth")
    lo, hi = spec.ofcs_per_patient
    per_patient = rng.integers(lo, hi + 1, size=spec.patients)
    pids = np.repeat([f"P{i + 1:05d}" for i in range(spec.patients)], per_patient)
    n = len(pids)
    y = np.where(rng.random(n) < spec.positive_rate, PASS, FAIL)

    cols: dict[str, np.ndarray] = {"patient_id": pids}
    for j, name in enumerate(informative_names(spec)):
        sign = 1.0 if j % 2 == 0 else -1.0
        cols[name] = rng.standard_normal(n) + sign * spec.separation * (y == PASS)
    rate_pass, rate_fail = spec.comorbidity_rates
    for name in comorbidity_names(spec):
        cols[name] = (rng.random(n) < np.where(y == PASS, rate_pass, rate_fail)).astype(float)
    for name in noise_names(spec):
        cols[name] = rng.standard_normal(n)
    cols["outcome"] = y.astype(float)
    return Table(schema_for(spec).columns, cols)


def manifest(spec: SynthSpec) -> dict:
    """Ground truth: which columns carry class signal."""
    informative = informative_names(spec)
    if spec.comorbidity_rates[0] != spec.comorbidity_rates[1]:
        informative += comorbidity_names(spec)
    if spec.separation == 0:
        informative = [c for c in informative if c not in informative_names(spec)]
    spec_doc = asdict(spec)
    spec_doc["ofcs_per_patient"] = list(spec.ofcs_per_patient)
    spec_doc["comorbidity_rates"] = list(spec.comorbidity_rates)
    return {"spec": spec_doc, "informative_columns": informative,
            "noise_columns": [c for c in informative_names(spec) + comorbidity_names(spec) + noise_names(spec)
                              if c not in informative]}


def write_dataset(spec: SynthSpec, out_dir, comments=()) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"data": out / "data.csv", "schema": out / "schema.yaml", "manifest": out / "manifest.json"}
    write_csv(generate(spec), paths["data"], comments)
    dump_schema(schema_for(spec), paths["schema"])
    doc = manifest(spec)
    if comments:
        doc = {"provenance": list(comments), **doc}
    paths["manifest"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
