"""File exports: metric tables, rankings, manifests, SHAP tables and plots."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .classifiers import KINDS, save_model
from .metrics import METRIC_TITLES, METRICS, MetricSummary
from .mrmr import RankSummary
from .shapley import ShapSummary

KIND_TITLES = {"naive_bayes": "Naive Bayes", "logistic_regression": "Logistic Regression", "svm": "SVM",
               "random_forest": "Random Forest", "lucck": "LUCCK"}
STRATEGY_TITLES = {"cv": "cross-validation", "ensemble": "ensemble"}


def _comment_block(lines: Sequence[str]) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return "undefined" if v is None else repr(float(v))


def metrics_table(summary: dict[tuple[str, str], MetricSummary], kinds: Sequence[str] = KINDS,
                  digits: int = 3) -> tuple[list[str], list[list[str]]]:
    """Rows = (strategy, model), columns = metrics as ``mean (std)``."""
    header = ["strategy", "model"] + [METRIC_TITLES[m] for m in METRICS] + ["shuffles"]
    rows = []
    for strategy in ("cv", "ensemble"):
        for kind in kinds:
            s = summary.get((kind, strategy))
            if s is None:
                continue
            rows.append([strategy, KIND_TITLES.get(kind, kind)] + [s.cell(m, digits) for m in METRICS]
                        + [str(len(s.per_shuffle))])
    return header, rows


def write_metrics_table(summary, path, provenance: Sequence[str], kinds: Sequence[str] = KINDS) -> None:
    header, rows = metrics_table(summary, kinds)
    Path(path).write_text(_comment_block(provenance) + _csv_text(header, rows), encoding="utf-8")


def write_per_shuffle(result, path, provenance: Sequence[str]) -> None:
    rows = []
    for s in result.shuffles:
        for kind in result.config.models:
            kr = s.kinds.get(kind)
            for strategy in ("cv", "ensemble"):
                rep = kr.metrics.get(strategy) if kr else None
                vals = [_fmt(getattr(rep, m)) if rep else "failed" for m in METRICS]
                rows.append([s.index, strategy, kind] + vals)
    header = ["shuffle", "strategy", "model"] + list(METRICS)
    Path(path).write_text(_comment_block(provenance) + _csv_text(header, rows), encoding="utf-8")


def write_rankings(rows: Sequence[RankSummary], path, provenance: Sequence[str]) -> None:
    body = [[i + 1, r.feature, f"{r.mean_rank:.3f}", f"{r.std_rank:.3f}"] for i, r in enumerate(rows)]
    text = _csv_text(["rank", "feature", "mean_rank", "std_rank"], body)
    Path(path).write_text(_comment_block(provenance) + text, encoding="utf-8")


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_result(result, out_dir, provenance: Sequence[str], save_models: bool = True) -> dict[str, Path]:
    """Write the full set of run outputs under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "per_shuffle": out / "per_shuffle_metrics.csv",
             "result": out / "result.json", "rankings": out / "rankings.csv", "manifests": out / "manifests"}
    write_metrics_table(result.summary, paths["metrics"], provenance, result.config.models)
    write_per_shuffle(result, paths["per_shuffle"], provenance)
    write_json({"provenance": list(provenance), **result.to_dict()}, paths["result"])
    from .mrmr import summarize_rankings
    write_rankings(summarize_rankings([s.ranking for s in result.shuffles if s.ranking]), paths["rankings"],
                   provenance)

    paths["manifests"].mkdir(exist_ok=True)
    for s in result.shuffles:
        lines = list(provenance) + [f"shuffle={s.index}", f"features={','.join(s.features)}"]
        lines += ["audit stage rows synthetic tainted"]
        entries = list(s.audit) + [e for k in s.kinds.values() for e in k.audit]
        lines += [f"audit {e.stage} {e.rows} {e.synthetic} {e.tainted}" for e in entries]
        body = s.partition.to_manifest() if s.partition else ""
        (paths["manifests"] / f"shuffle_{s.index:02d}.tsv").write_text(_comment_block(lines) + body,
                                                                        encoding="utf-8")
    if save_models:
        models = out / "models"
        paths["models"] = models
        for s in result.shuffles:
            d = models / f"shuffle_{s.index:02d}"
            for kr in s.kinds.values():
                for strategy, model in kr.models.items():
                    d.mkdir(parents=True, exist_ok=True)
                    save_model(model, d / f"{kr.kind}_{strategy}.model",
                               {"lines": list(provenance), "shuffle": s.index, "strategy": strategy})
    return paths


# -- SHAP ----------------------------------------------------------------------

def write_shap_table(summary: ShapSummary, path, provenance: Sequence[str]) -> None:
    lines = list(provenance) + [f"samples={summary.n_samples} pass={summary.n_pass} fail={summary.n_fail}",
                                "classes grouped by true label"]
    if summary.empty_classes:
        lines.append("empty classes: " + ",".join(summary.empty_classes))
    rows = [[r.feature, _fmt(r.mean_abs), _fmt(r.mean_abs_pass) if r.mean_abs_pass is not None else "empty",
             _fmt(r.mean_abs_fail) if r.mean_abs_fail is not None else "empty"] for r in summary.rows]
    text = _csv_text(["feature", "mean_abs_shap", "mean_abs_shap_pass", "mean_abs_shap_fail"], rows)
    Path(path).write_text(_comment_block(lines) + text, encoding="utf-8")


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "ofc-ensemble"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def plot_shap(summary: ShapSummary, path, provenance: Sequence[str]) -> None:
    """Horizontal stacked bars of mean |SHAP| per feature, coded by true class."""
    plt = _figure()
    rows = list(reversed(summary.rows))
    names = [r.feature for r in rows]
    passes = [r.mean_abs_pass or 0.0 for r in rows]
    fails = [r.mean_abs_fail or 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.5))
    ax.barh(names, passes, color="#1f77b4", label=f"pass (n={summary.n_pass})")
    ax.barh(names, fails, left=passes, color="#d62728", label=f"fail (n={summary.n_fail})")
    ax.set_xlabel("mean |SHAP value|")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": "; ".join(provenance)})
    plt.close(fig)


def plot_rankings(rows: Sequence[RankSummary], path, provenance: Sequence[str]) -> None:
    plt = _figure()
    rows = list(reversed(rows))
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.5))
    ax.barh([r.feature for r in rows], [r.mean_rank for r in rows], xerr=[r.std_rank for r in rows],
            color="#2ca02c")
    ax.set_xlabel("mean mRMR rank (lower is more important)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": "; ".join(provenance)})
    plt.close(fig)


# -- consolidated summary -------------------------------------------------------

def render_summary(result_doc: dict) -> str:
    """Human-readable markdown digest of a ``result.json`` document."""
    from .metrics import MetricReport, aggregate

    lines = [f"# Experiment report: {result_doc['dataset']}", ""]
    lines += [f"- {p}" for p in result_doc.get("provenance", [])]
    lines += [f"- shuffles: {len(result_doc['shuffles'])}",
              f"- ensemble score rule: {result_doc['ensemble_score_rule']}", ""]
    summary = {}
    for entry in result_doc["summary"]:
        reports = [MetricReport(**r) for r in entry["per_shuffle"]]
        summary[(entry["kind"], entry["strategy"])] = aggregate(reports)
    kinds = result_doc["config"]["models"]
    header, rows = metrics_table(summary, kinds)
    for strategy in ("cv", "ensemble"):
        lines += [f"## Test metrics, {STRATEGY_TITLES[strategy]} models (mean (std) over shuffles)", ""]
        lines.append("| " + " | ".join(header[1:-1]) + " |")
        lines.append("|" + "---|" * (len(header) - 2))
        lines += ["| " + " | ".join(r[1:-1]) + " |" for r in rows if r[0] == strategy]
        lines.append("")
    lines += ["## Selected features per shuffle", ""]
    for s in result_doc["shuffles"]:
        lines.append(f"- shuffle {s['index']}: " + (", ".join(s["features"]) or "(none)"))
    lines += ["", "## Chosen hyperparameters", ""]
    for s in result_doc["shuffles"]:
        for kind, k in sorted(s["kinds"].items()):
            hp = json.dumps(k["hyperparameters"], sort_keys=True) if k["hyperparameters"] is not None else "-"
            lines.append(f"- shuffle {s['index']} {kind}: {hp}")
    lines += ["", "## Failures", ""]
    lines += [f"- {f}" for f in result_doc["failures"]] or ["- none"]
    return "\n".join(lines) + "\n"
