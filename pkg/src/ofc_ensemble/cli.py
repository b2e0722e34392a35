"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config validation error,
3 runtime failure. ``OFC_ENSEMBLE_OUTPUT`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .classifiers import KINDS, load_model, read_header
from .config import ConfigError, PipelineConfig, load_config
from .metrics import aggregate, evaluate
from .mrmr import mrmr_rank, summarize_rankings
from .pipeline import ExperimentError, run_experiment
from .report import (plot_rankings, plot_shap, render_summary, write_metrics_table, write_rankings,
                     write_result, write_shap_table)
from .shapley import ShapConfig, ShapError, aggregate_shap, explain
from .split import PartitionError, make_partition
from .synth import SynthSpec, write_dataset
from .tabular import (EmptyTableError, ParseError, SchemaError, Table, align_features, load_schema, one_hot,
                      preprocess, read_csv, write_csv)

log = logging.getLogger("ofc_ensemble")

OUTPUT_ENV = "OFC_ENSEMBLE_OUTPUT"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (ConfigError, SchemaError, ParseError, EmptyTableError, PartitionError, FileNotFoundError,
                     IsADirectoryError, PermissionError, ShapError, KeyError)

CONFIG_HELP = """\
config document (YAML or JSON) keys and defaults:
  dataset: dataset             name used in reports
  seed: 0
  partition: {feature_selection_fraction: 0.2, test_fraction: 0.2, folds: 3, shuffles: 10}
  features: elbow              or a fixed feature count, e.g. 15
  elbow: {probe: logistic_regression, max_k: null}
  bins: 10                     equal-frequency bins for mutual information
  models: [naive_bayes, logistic_regression, svm, random_forest, lucck]
  smote: {enabled: true, k_neighbors: 5}
  search:
    trials: 20
    svm: {C: [0.001, 100], gamma: [0.001, 100], kernels: [linear, rbf]}
    lucck: {theta: [0.01, 1000], lambda: [0.01, 10000]}
    random_forest: {n_trees: [20, 40, 80, 100, 160], criterion: [gini, information_gain],
                    min_leaf: [1, 2, 5], max_features: [6, 12, 24], max_splits: [N, log2N]}
  shap: {background: 100, coalitions: null, max_samples: 50}
  output_dir: null             falls back to $OFC_ENSEMBLE_OUTPUT, then ./ofc-output
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(arg, cfg: PipelineConfig | None = None, default_leaf: str = "") -> Path:
    if arg:
        return Path(arg)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ENV, "ofc-output")) / default_leaf


def _load_cfg(path) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _resolve(arg, cfg_value, what: str) -> str:
    value = arg or cfg_value
    if not value:
        raise ConfigError(f"no {what} given (pass --{what} or set it in the config)")
    return value


def _load_table(data, schema_path) -> tuple[Table, object]:
    schema = load_schema(schema_path)
    raw = read_csv(data, schema)
    return one_hot(preprocess(raw, schema.drop)), schema


def _find_schema(start: Path) -> Path:
    for d in [start] + list(start.parents)[:3]:
        if (d / "schema.yaml").is_file():
            return d / "schema.yaml"
    raise FileNotFoundError(f"no schema.yaml found near {start}; pass --schema")


def _provenance(cfg: PipelineConfig | None, extra: str | None = None) -> list[str]:
    lines = cfg.provenance() if cfg else [f"ofc-ensemble {__version__}"]
    return lines + ([extra] if extra else [])


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> None:
    doc = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    try:
        spec = SynthSpec.from_mapping(doc or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth spec: {exc}") from exc
    out = _out_dir(args.out, default_leaf="synth")
    prov = [f"ofc-ensemble {__version__}", f"synth seed={spec.seed}"]
    paths = write_dataset(spec, out, prov)
    print(f"wrote {paths['data']} ({spec.patients} patients), {paths['schema']}, {paths['manifest']}")


def cmd_preprocess(args) -> None:
    schema = load_schema(args.schema)
    raw = read_csv(args.data, schema)
    clean = preprocess(raw, schema.drop)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(clean, out, [f"ofc-ensemble {__version__}", "preprocessed"])
    print(f"kept {clean.n_rows} of {raw.n_rows} rows -> {out}")


def cmd_rank(args) -> None:
    cfg = _load_cfg(args.config)
    table, _ = _load_table(_resolve(args.data, cfg.data, "data"), _resolve(args.schema, cfg.schema, "schema"))
    rankings = []
    for s in range(cfg.partition.shuffles):
        p = make_partition(table, cfg.partition, s)
        rankings.append(mrmr_rank(table.take(p.feature_selection_rows), table.feature_names(), cfg.bins))
    rows = summarize_rankings(rankings)
    out = _out_dir(args.out, cfg, "rank")
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg)
    write_rankings(rows, out / "rankings.csv", prov)
    plot_rankings(rows, out / "rankings.svg", prov)
    print(f"ranked {len(rows)} features over {len(rankings)} shuffles -> {out / 'rankings.csv'}")


def cmd_train(args) -> None:
    cfg = _load_cfg(args.config)
    if args.folds is not None or args.shuffles is not None or args.seed is not None:
        doc = cfg.to_mapping()
        if args.folds is not None:
            doc["partition"]["folds"] = args.folds
        if args.shuffles is not None:
            doc["partition"]["shuffles"] = args.shuffles
        if args.seed is not None:
            doc["seed"] = args.seed
        cfg = PipelineConfig.from_mapping(doc)
    data = _resolve(args.data, cfg.data, "data")
    schema_path = _resolve(args.schema, cfg.schema, "schema")
    table, _ = _load_table(data, schema_path)
    out = _out_dir(args.out, cfg, "run")
    result = run_experiment(table, cfg, threads=args.threads)
    prov = _provenance(cfg)
    paths = write_result(result, out, prov)
    shutil.copyfile(schema_path, out / "schema.yaml")
    doc = {k: v for k, v in cfg.to_mapping().items() if k != "output_dir"}
    (out / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    for f in result.failures:
        log.warning("failure: %s", f)
    print(f"trained {len(cfg.models)} model kinds over {cfg.partition.shuffles} shuffles -> {paths['metrics']}")


def cmd_evaluate(args) -> None:
    models_dir = Path(args.models)
    files = sorted(models_dir.rglob("*.model"))
    if not files:
        raise FileNotFoundError(f"no model artifacts under {models_dir}")
    schema_path = Path(args.schema) if args.schema else _find_schema(models_dir)
    table, _ = _load_table(args.data, schema_path)
    y = table.labels
    reports: dict[tuple[str, str], list] = {}
    for path in files:
        head = read_header(path)
        model = load_model(path)
        X = align_features(table, model.features)
        strategy = "ensemble" if head.get("ensemble") else "cv"
        reports.setdefault((head["kind"], strategy), []).append(evaluate(model.score(X), model.predict(X), y))
    summary = {k: aggregate(v) for k, v in reports.items()}
    out = _out_dir(args.out, default_leaf="evaluate")
    out.mkdir(parents=True, exist_ok=True)
    prov = [f"ofc-ensemble {__version__}", f"models={len(files)}", f"rows={table.n_rows}"]
    kinds = [k for k in KINDS if any(kind == k for kind, _ in summary)]
    write_metrics_table(summary, out / "metrics.csv", prov, kinds)
    print(f"evaluated {len(files)} models on {table.n_rows} rows -> {out / 'metrics.csv'}")


def cmd_explain(args) -> None:
    cfg = _load_cfg(args.config)
    model = load_model(args.model)
    schema_path = Path(args.schema) if args.schema else _find_schema(Path(args.model).parent)
    table, _ = _load_table(args.data, schema_path)
    if cfg.shap_max_samples is not None and table.n_rows > cfg.shap_max_samples:
        table = table.take(np.arange(cfg.shap_max_samples))
    X = align_features(table, model.features)
    if model.background is None:
        raise ShapError("model artifact carries no background sample")
    shap_cfg = ShapConfig(model.background, cfg.shap_coalitions, cfg.seed)
    phis = np.array([explain(model.score, x, shap_cfg)[1] for x in X])
    summary = aggregate_shap(phis, table.labels, model.features)
    out = _out_dir(args.out, cfg, "explain")
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, f"model={read_header(args.model)['kind']}")
    write_shap_table(summary, out / "shap.csv", prov)
    plot_shap(summary, out / "shap.svg", prov)
    print(f"explained {len(X)} samples over {len(model.features)} features -> {out / 'shap.csv'}")


def cmd_report(args) -> None:
    run = Path(args.run)
    doc = json.loads((run / "result.json").read_text(encoding="utf-8"))
    out = Path(args.out) if args.out else run / "report.md"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_summary(doc), encoding="utf-8")
    print(f"report -> {out}")


# -- wiring ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ofc-ensemble", description="Ensemble-learning pipeline for binary clinical outcomes.",
                epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="write a synthetic cohort (CSV + schema + manifest)")
    s.add_argument("--spec", help="synth spec document; defaults apply when omitted")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="apply the preprocessing rules to a CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("rank", help="mRMR rankings over shuffles")
    for flag in ("--data", "--schema", "--config", "--out"):
        s.add_argument(flag)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("train", help="run the full experiment", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    for flag in ("--data", "--schema", "--config", "--out"):
        s.add_argument(flag)
    s.add_argument("--folds", type=int, help="override partition.folds")
    s.add_argument("--shuffles", type=int, help="override partition.shuffles")
    s.add_argument("--seed", type=int, help="override seed")
    s.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score persisted models on a dataset")
    s.add_argument("--models", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--schema")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("explain", help="kernel SHAP attributions for one model artifact")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--schema")
    s.add_argument("--out")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", help="human-readable summary of a training run")
    s.add_argument("--run", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except VALIDATION_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
