"""End-to-end experiment: repeated shuffles of select -> search -> build -> test.

Every shuffle re-draws the partition, ranks features with mRMR on its
feature-selection rows, picks the feature count, and then for each model kind
searches hyperparameters over the CV folds, builds the cross-validation model
(refit on all train/validation rows) and the majority-vote ensemble of the fold
models, and scores both on the untouched test rows.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .classifiers import KINDS, ClassifierSpec, FitError, TrainedModel, fit
from .config import DEFAULT_HYPERPARAMETERS, PipelineConfig, SearchSpace
from .metrics import METRICS, MetricReport, MetricSummary, aggregate, auc, evaluate, UndefinedMetricError
from .mrmr import FeatureRanking, elbow_select, mrmr_rank
from .provenance import AuditEntry, audit, guard
from .rng import derive_int
from .shapley import background_sample
from .smote import SmoteConfig, smote_enrich
from .split import Partition, fold_views, make_partition
from .tabular import FAIL, PASS, ScalerParams, Table, align_features, standardize_apply, standardize_fit

log = logging.getLogger(__name__)

STRATEGIES = ("cv", "ensemble")
ENSEMBLE_SCORE_RULE = "mean of member scores"


class SearchError(RuntimeError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# -- per-fold preparation ------------------------------------------------------

@dataclass(frozen=True)
class PreparedFold:
    """Standardized (and SMOTE-enriched) training view plus its validation view."""
    train: Table
    validation: Table | None
    scaler: ScalerParams
    raw_train: Table


def prepare(train: Table, validation: Table | None, features: Sequence[str], *, smote: bool = True,
            smote_k: int = 5, seed: int = 0) -> PreparedFold:
    """Fit the scaler on ``train`` only, apply it to both views, then SMOTE the training view."""
    numeric = [f for f in features if train.spec(f).kind == "numeric"]
    scaler = standardize_fit(train, numeric)
    tr = standardize_apply(train, scaler)
    va = standardize_apply(validation, scaler) if validation is not None else None
    if smote:
        tr = smote_enrich(tr, SmoteConfig(smote_k, seed), features)
    return PreparedFold(tr, va, scaler, train)


def _attach(model: TrainedModel, prepared: PreparedFold, background_size: int, seed: int) -> TrainedModel:
    bg = background_sample(prepared.raw_train.matrix(model.features), background_size, seed)
    return replace(model, scaler=prepared.scaler, background=bg)


# -- ensembles -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """Fold models combined by majority vote (labels) and mean score (ranking)."""
    members: tuple[TrainedModel, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if (m.kind, m.features, dict(m.hyperparameters)) != (first.kind, first.features,
                                                                  dict(first.hyperparameters)):
                raise ValueError("ensemble members must share kind, hyperparameters and features")

    kind = property(lambda self: self.members[0].kind)
    features = property(lambda self: self.members[0].features)
    hyperparameters = property(lambda self: self.members[0].hyperparameters)
    threshold = property(lambda self: self.members[0].threshold)

    @property
    def background(self):
        bgs = [m.background for m in self.members if m.background is not None]
        return np.vstack(bgs) if bgs else None

    def votes(self, X) -> np.ndarray:
        return np.vstack([m.predict(X) for m in self.members])

    def predict(self, X) -> np.ndarray:
        """Mode of member labels; an exact split (even member count) goes to pass."""
        pass_votes = (self.votes(X) == PASS).sum(axis=0)
        return np.where(2 * pass_votes >= len(self.members), PASS, FAIL)

    def score(self, X) -> np.ndarray:
        return np.mean([m.score(X) for m in self.members], axis=0)

    def score_table(self, t: Table) -> np.ndarray:
        return self.score(align_features(t, self.features))

    def predict_table(self, t: Table) -> np.ndarray:
        return self.predict(align_features(t, self.features))

    def header(self) -> dict:
        head = self.members[0].header()
        head.update(kind=self.kind, ensemble=True, members=[m.header() for m in self.members],
                    score_rule=ENSEMBLE_SCORE_RULE, scaler=None, training_fingerprint=None)
        return head


def ensemble_predict(e: EnsembleModel, x) -> tuple[int, float]:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return int(e.predict(x)[0]), float(e.score(x)[0])


# -- search and model construction ------------------------------------------------

@dataclass(frozen=True)
class SearchOutcome:
    best: dict
    trace: tuple[tuple[dict, float | None], ...]


def _rf_prefix_key(hp: dict, n_features: int) -> tuple:
    mf = hp.get("max_features")
    mf = n_features if mf is None else min(int(mf), n_features)
    return tuple(sorted((k, v) for k, v in hp.items() if k not in ("n_trees", "max_features"))) + (("mf", mf),)


def search_hyperparameters(kind: str, space: SearchSpace, folds: Sequence[PreparedFold], seed: int,
                           shuffle: int = 0, features: Sequence[str] | None = None,
                           candidates: Sequence[dict] | None = None) -> SearchOutcome:
    """Return the candidate with the greatest mean validation AUC over ``folds``.

    Ties keep the earliest candidate. Folds whose validation set holds a single
    class are left out of that candidate's mean.
    """
    if len(folds) < 2:
        raise SearchError("hyperparameter search needs at least two folds")
    for f in folds:
        guard("hyperparameter_search", f.train)
        guard("hyperparameter_search", f.validation)
    features = tuple(features) if features is not None else folds[0].raw_train.feature_names()
    cands = list(candidates) if candidates is not None else space.candidates(kind, seed, shuffle)
    if not cands:
        raise SearchError("empty search space")

    forests: dict[tuple, TrainedModel] = {}
    trace, causes = [], []
    best, best_auc = None, None
    for hp in cands:
        aucs = []
        try:
            for i, f in enumerate(folds):
                if kind == "random_forest":
                    key = (i,) + _rf_prefix_key(hp, len(features))
                    n_max = max(c["n_trees"] for c in cands
                                if _rf_prefix_key(c, len(features)) == key[1:])
                    if key not in forests:
                        big = dict(hp, n_trees=n_max)
                        forests[key] = fit(ClassifierSpec(kind, big), f.train, features)
                    base = forests[key]
                    model = replace(base, hyperparameters=dict(hp),
                                    estimator=base.estimator.truncated(int(hp["n_trees"])))
                else:
                    model = fit(ClassifierSpec(kind, hp), f.train, features)
                try:
                    aucs.append(auc(model.score(f.validation.matrix(features)), f.validation.labels))
                except UndefinedMetricError:
                    pass
        except Exception as exc:  # a failing candidate is recorded, not fatal
            causes.append(f"{hp}: {exc}")
            trace.append((hp, None))
            continue
        mean_auc = float(np.mean(aucs)) if aucs else None
        trace.append((hp, mean_auc))
        if best is None or (mean_auc is not None and (best_auc is None or mean_auc > best_auc)):
            best, best_auc = hp, mean_auc
    if best is None:
        raise SearchError(f"all {len(cands)} {kind} candidates failed: " + "; ".join(causes[:5]))
    return SearchOutcome(dict(best), tuple(trace))


def build_cv_model(kind: str, best_hp: dict, trainval: Table, features: Sequence[str], *, smote: bool = True,
                   smote_k: int = 5, seed: int = 0, background: int = 100) -> TrainedModel:
    """One model fit on every train/validation row (scaled and enriched as in the folds)."""
    prepared = prepare(trainval, None, features, smote=smote, smote_k=smote_k, seed=seed)
    model = fit(ClassifierSpec(kind, best_hp), prepared.train, features)
    return _attach(model, prepared, background, seed)


def build_ensemble(kind: str, best_hp: dict, folds: Sequence[PreparedFold], features: Sequence[str], *,
                   background: int = 100, seed: int = 0) -> EnsembleModel:
    """One member per fold, each fit on that fold's prepared training view."""
    members = []
    for i, f in enumerate(folds):
        m = fit(ClassifierSpec(kind, best_hp), f.train, features)
        members.append(_attach(m, f, background, derive_int(seed, "member", i)))
    return EnsembleModel(tuple(members))


# -- experiment records ----------------------------------------------------------

@dataclass
class KindRun:
    kind: str
    hyperparameters: dict | None = None
    search_trace: tuple = ()
    metrics: dict[str, MetricReport] = field(default_factory=dict)
    models: dict[str, Any] = field(default_factory=dict)
    audit: tuple[AuditEntry, ...] = ()
    error: str | None = None


@dataclass
class ShuffleRun:
    index: int
    partition: Partition | None = None
    ranking: FeatureRanking | None = None
    features: tuple[str, ...] = ()
    elbow_curve: tuple[tuple[int, float], ...] = ()
    audit: tuple[AuditEntry, ...] = ()
    kinds: dict[str, KindRun] = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None or any(k.error for k in self.kinds.values())


@dataclass
class ExperimentResult:
    dataset: str
    config: PipelineConfig
    shuffles: list[ShuffleRun]
    summary: dict[tuple[str, str], MetricSummary]

    @property
    def failures(self) -> list[str]:
        out = []
        for s in self.shuffles:
            if s.error:
                out.append(f"shuffle {s.index}: {s.error}")
            out += [f"shuffle {s.index} {k.kind}: {k.error}" for k in s.kinds.values() if k.error]
        return out

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "dataset": self.dataset,
            "config_sha256": self.config.config_hash(),
            "seed": self.config.seed,
            "config": {k: v for k, v in self.config.to_mapping().items() if k != "output_dir"},
            "ensemble_score_rule": ENSEMBLE_SCORE_RULE,
            "summary": [{"kind": k, "strategy": s, **self.summary[(k, s)].as_dict()}
                        for k in self.config.models for s in STRATEGIES if (k, s) in self.summary],
            "shuffles": [{
                "index": s.index,
                "error": s.error,
                "features": list(s.features),
                "ranking": [[n, v] for n, v in s.ranking.ordered] if s.ranking else [],
                "elbow_curve": [list(p) for p in s.elbow_curve],
                "kinds": {k.kind: {"hyperparameters": k.hyperparameters, "error": k.error,
                                   "metrics": {st: r.as_dict() for st, r in k.metrics.items()},
                                   "search": [{"hyperparameters": hp, "mean_validation_auc": a}
                                              for hp, a in k.search_trace]}
                          for k in s.kinds.values()},
            } for s in self.shuffles],
            "failures": self.failures,
        }


# -- orchestration -----------------------------------------------------------------

def _stage_seed(cfg: PipelineConfig, *keys) -> int:
    return derive_int(cfg.seed, *keys)


def _folds(trainval_full: Table, partition: Partition, features, cfg: PipelineConfig, shuffle: int):
    out = []
    for fold in range(partition.folds):
        train, validation = fold_views(trainval_full, partition, fold)
        out.append(prepare(train, validation, features, smote=cfg.smote, smote_k=cfg.smote_k,
                           seed=_stage_seed(cfg, "smote", shuffle, fold)))
    return out


def _tainted(table: Table, partition: Partition) -> Table:
    mask = np.zeros(table.n_rows, bool)
    mask[list(partition.test_rows)] = True
    return table.with_taint(mask)


def choose_feature_count(table: Table, partition: Partition, ranking: FeatureRanking, cfg: PipelineConfig,
                         shuffle: int) -> tuple[int, tuple[tuple[int, float], ...]]:
    n = len(ranking.names)
    if cfg.features != "elbow":
        return min(int(cfg.features), n), ()
    k_max = min(n, cfg.elbow_max_k or n)
    if k_max < 3:
        return k_max, ()
    probe = ClassifierSpec(cfg.elbow_probe, DEFAULT_HYPERPARAMETERS[cfg.elbow_probe])
    curve = []
    for k in range(1, k_max + 1):
        feats = ranking.top(k)
        aucs = []
        for f in _folds(table, partition, feats, cfg, shuffle):
            guard("hyperparameter_search", f.validation)
            model = fit(probe, f.train, feats)
            try:
                aucs.append(auc(model.score(f.validation.matrix(feats)), f.validation.labels))
            except UndefinedMetricError:
                pass
        curve.append((k, float(np.mean(aucs)) if aucs else 0.5))
    return elbow_select(curve), tuple(curve)


def run_shuffle_selection(table: Table, cfg: PipelineConfig, shuffle: int) -> ShuffleRun:
    """Partition, mRMR ranking and feature-count choice for one shuffle."""
    run = ShuffleRun(shuffle)
    with audit() as entries:
        try:
            run.partition = make_partition(table, cfg.partition, shuffle)
            full = _tainted(table, run.partition)
            fs = full.take(run.partition.feature_selection_rows)
            run.ranking = mrmr_rank(fs, table.feature_names(), cfg.bins)
            k, run.elbow_curve = choose_feature_count(full, run.partition, run.ranking, cfg, shuffle)
            run.features = run.ranking.top(k)
        except Exception as exc:
            run.error = f"{type(exc).__name__}: {exc}"
    run.audit = tuple(entries)
    return run


def run_kind(table: Table, cfg: PipelineConfig, sel: ShuffleRun, kind: str) -> KindRun:
    """Search, build and test one model kind within one shuffle."""
    out = KindRun(kind)
    s = sel.index
    feats = sel.features
    with audit() as entries:
        try:
            full = _tainted(table, sel.partition)
            folds = _folds(full, sel.partition, feats, cfg, s)
            found = search_hyperparameters(kind, cfg.search, folds, cfg.seed, s, feats)
            out.hyperparameters, out.search_trace = found.best, found.trace
            trainval = full.take(sel.partition.trainval_rows)
            test = full.take(sel.partition.test_rows)
            cv = build_cv_model(kind, found.best, trainval, feats, smote=cfg.smote, smote_k=cfg.smote_k,
                                seed=_stage_seed(cfg, "smote", s, "all"), background=cfg.shap_background)
            ens = build_ensemble(kind, found.best, folds, feats, background=cfg.shap_background,
                                 seed=_stage_seed(cfg, "background", s))
            y = test.labels
            X = test.matrix(feats)
            out.metrics = {"cv": evaluate(cv.score(X), cv.predict(X), y),
                           "ensemble": evaluate(ens.score(X), ens.predict(X), y)}
            out.models = {"cv": cv, "ensemble": ens}
        except Exception as exc:
            log.warning("shuffle %d, %s failed: %s", s, kind, exc)
            out.error = f"{type(exc).__name__}: {exc}"
    out.audit = tuple(entries)
    return out


_WORKER: dict = {}


def _init_worker(table, cfg):
    _WORKER["table"], _WORKER["cfg"] = table, cfg
    threadpool_limits(1)


def _select_task(shuffle):
    return run_shuffle_selection(_WORKER["table"], _WORKER["cfg"], shuffle)


def _kind_task(args):
    sel, kind = args
    return run_kind(_WORKER["table"], _WORKER["cfg"], sel, kind)


def run_experiment(t: Table, cfg: PipelineConfig, threads: int = 1, keep_models: bool = True) -> ExperimentResult:
    """Run every shuffle and aggregate test metrics per (kind, strategy).

    ``threads`` caps worker processes; results do not depend on it.
    Raises :class:`ExperimentError` if more than half of the shuffles fail.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    shuffles = list(range(cfg.partition.shuffles))
    if threads == 1:
        with threadpool_limits(1):
            selections = [run_shuffle_selection(t, cfg, s) for s in shuffles]
            jobs = [(sel, k) for sel in selections if sel.error is None for k in cfg.models]
            kind_runs = [run_kind(t, cfg, sel, k) for sel, k in jobs]
    else:
        workers = min(threads, os.cpu_count() or 1, max(1, len(shuffles) * len(cfg.models)))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(t, cfg)) as pool:
            selections = list(pool.map(_select_task, shuffles))
            jobs = [(sel, k) for sel in selections if sel.error is None for k in cfg.models]
            kind_runs = list(pool.map(_kind_task, jobs))

    for (sel, _), kr in zip(jobs, kind_runs):
        if not keep_models:
            kr.models = {}
        sel.kinds[kr.kind] = kr

    summary = {}
    for kind in cfg.models:
        for strategy in STRATEGIES:
            reports = [sel.kinds[kind].metrics[strategy] for sel in selections
                       if kind in sel.kinds and strategy in sel.kinds[kind].metrics]
            if reports:
                summary[(kind, strategy)] = aggregate(reports)
    result = ExperimentResult(cfg.dataset, cfg, selections, summary)
    failed = sum(s.failed for s in selections)
    if failed * 2 > len(selections):
        raise ExperimentError(f"{failed} of {len(selections)} shuffles failed: " + "; ".join(result.failures[:5]),
                              result)
    return result


__all__ = [
    "EnsembleModel", "ExperimentError", "ExperimentResult", "KindRun", "PreparedFold", "SearchError",
    "SearchOutcome", "ShuffleRun", "STRATEGIES", "build_cv_model", "build_ensemble", "choose_feature_count",
    "ensemble_predict", "prepare", "run_experiment", "run_kind", "run_shuffle_selection",
    "search_hyperparameters", "METRICS", "KINDS",
]
