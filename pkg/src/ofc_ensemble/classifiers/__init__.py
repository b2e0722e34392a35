"""Five binary classifiers behind one fit / predict / score contract.

Every fitted model produces a real-valued score that increases with confidence
in the pass class; the label is pass exactly when the score reaches the kind's
threshold (0.5 for probability-like scores, 0 for SVM decision values).
"""
from __future__ import annotations

import hashlib
import io
import json
import pickle
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.naive_bayes import GaussianNB
from sklearn.svm import SVC

from .. import __version__
from ..provenance import guard
from ..tabular import FAIL, PASS, ScalerParams, Table, align_features
from .forest import CRITERIA, RandomForest, resolve_max_splits
from .lucck import (LucckClassifier, LucckParams, lucck_class_affinity, lucck_kernel, lucck_predict,
                    lucck_similarity)

KINDS = ("naive_bayes", "logistic_regression", "svm", "random_forest", "lucck")
ARTIFACT_FORMAT = "ofc-ensemble-model"
ARTIFACT_VERSION = 1

__all__ = [
    "KINDS", "ClassifierSpec", "TrainedModel", "fit", "score", "predict", "save_model", "load_model",
    "LucckClassifier", "LucckParams", "RandomForest", "lucck_kernel", "lucck_similarity",
    "lucck_class_affinity", "lucck_predict", "FitError",
]


class FitError(ValueError):
    pass


class GaussianNaiveBayes:
    threshold = 0.5

    def fit(self, X, y):
        self.model_ = GaussianNB(var_smoothing=1e-9).fit(X, y)
        return self

    def posterior(self, X) -> np.ndarray:
        return self.model_.predict_proba(X)

    def decision(self, X):
        return self.model_.predict_proba(X)[:, list(self.model_.classes_).index(PASS)]


class L2LogisticRegression:
    threshold = 0.5

    def __init__(self, C=1.0):
        self.C = float(C)

    def fit(self, X, y):
        self.model_ = LogisticRegression(C=self.C, solver="newton-cholesky", tol=1e-10, max_iter=1000)
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            try:
                self.model_.fit(X, y)
            except ConvergenceWarning:
                # newton-cholesky occasionally stalls on near-separable data; lbfgs is the fallback
                self.model_ = LogisticRegression(C=self.C, solver="lbfgs", tol=1e-12, max_iter=1000)
                warnings.simplefilter("ignore", ConvergenceWarning)
                self.model_.fit(X, y)
        return self

    @property
    def coef(self) -> np.ndarray:
        return self.model_.coef_[0]

    @property
    def intercept(self) -> float:
        return float(self.model_.intercept_[0])

    def decision(self, X):
        return self.model_.predict_proba(X)[:, list(self.model_.classes_).index(PASS)]


class SupportVectorMachine:
    """LIBSVM dual solve; the score is the signed decision value."""

    threshold = 0.0

    def __init__(self, kernel="rbf", C=1.0, gamma=1.0):
        if kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown SVM kernel {kernel!r}")
        self.kernel, self.C, self.gamma = kernel, float(C), float(gamma)

    def fit(self, X, y):
        self.model_ = SVC(kernel=self.kernel, C=self.C, gamma=self.gamma if self.kernel == "rbf" else "scale",
                          tol=1e-3, cache_size=200)
        self.model_.fit(X, y)
        return self

    def decision(self, X):
        d = self.model_.decision_function(X)
        return d if self.model_.classes_[1] == PASS else -d


def _validate_hp(kind: str, hp: Mapping[str, Any]) -> dict:
    hp = dict(hp)
    allowed = {
        "naive_bayes": set(),
        "logistic_regression": {"C"},
        "svm": {"kernel", "C", "gamma"},
        "random_forest": {"n_trees", "criterion", "min_leaf", "max_features", "max_splits", "bootstrap", "seed"},
        "lucck": {"lambda", "theta"},
    }[kind]
    extra = set(hp) - allowed
    if extra:
        raise ValueError(f"{kind}: unknown hyperparameters {sorted(extra)}")
    for name in ("C", "gamma", "lambda", "theta"):
        if name in hp and np.any(np.asarray(hp[name], dtype=float) <= 0):
            raise ValueError(f"{kind}: {name} must be > 0, got {hp[name]}")
    if kind == "svm" and hp.get("kernel", "rbf") not in ("linear", "rbf"):
        raise ValueError(f"svm: unknown kernel {hp['kernel']!r}")
    if kind == "random_forest":
        if hp.get("criterion", "gini") not in CRITERIA:
            raise ValueError(f"random_forest: unknown criterion {hp['criterion']!r}")
        for name in ("n_trees", "min_leaf", "max_features"):
            if name in hp and hp[name] is not None and int(hp[name]) < 1:
                raise ValueError(f"random_forest: {name} must be >= 1")
        if "max_splits" in hp:
            resolve_max_splits(hp["max_splits"], 2)
    return hp


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r} (expected one of {KINDS})")
        object.__setattr__(self, "hyperparameters", _validate_hp(self.kind, self.hyperparameters))


def make_estimator(spec: ClassifierSpec):
    hp = dict(spec.hyperparameters)
    if spec.kind == "naive_bayes":
        return GaussianNaiveBayes()
    if spec.kind == "logistic_regression":
        return L2LogisticRegression(hp.get("C", 1.0))
    if spec.kind == "svm":
        return SupportVectorMachine(hp.get("kernel", "rbf"), hp.get("C", 1.0), hp.get("gamma", 1.0))
    if spec.kind == "random_forest":
        return RandomForest(hp.get("n_trees", 100), hp.get("criterion", "gini"), hp.get("min_leaf", 1),
                            hp.get("max_features"), hp.get("max_splits", "N"), hp.get("bootstrap", True),
                            hp.get("seed", 0))
    return LucckClassifier(hp.get("lambda", 1.0), hp.get("theta", 1.0))


def fingerprint(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted classifier bound to its feature order.

    ``scaler`` (if any) maps raw feature values into the space the estimator
    was trained in, so :meth:`score` and :meth:`predict` take raw inputs.
    ``background`` holds raw training rows used as the SHAP reference set.
    """
    kind: str
    hyperparameters: Mapping[str, Any]
    features: tuple[str, ...]
    estimator: Any
    scaler: ScalerParams | None = None
    training_fingerprint: str = ""
    background: np.ndarray | None = None

    @property
    def threshold(self) -> float:
        return self.estimator.threshold

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != len(self.features):
            raise ValueError(f"dimension mismatch: got {X.shape[1]} features, model uses {len(self.features)}")
        return self.scaler.transform(X, self.features) if self.scaler is not None else X

    def score(self, X) -> np.ndarray:
        return np.asarray(self.estimator.decision(self._prepare(X)), dtype=float)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score(X) >= self.threshold, PASS, FAIL)

    def score_table(self, t: Table) -> np.ndarray:
        return self.score(align_features(t, self.features))

    def predict_table(self, t: Table) -> np.ndarray:
        return self.predict(align_features(t, self.features))

    @property
    def parameter_fingerprint(self) -> str:
        return hashlib.sha256(canonical_dumps(self.estimator)).hexdigest()[:16]

    def header(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT, "version": ARTIFACT_VERSION, "tool_version": __version__,
            "kind": self.kind, "hyperparameters": _jsonable(dict(self.hyperparameters)),
            "features": list(self.features), "scaler": self.scaler.as_dict() if self.scaler else None,
            "training_fingerprint": self.training_fingerprint,
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def fit(spec: ClassifierSpec, train: Table, features: Sequence[str]) -> TrainedModel:
    """Fit ``spec`` on the ``features`` columns of ``train``."""
    guard("model_fit", train)
    features = tuple(features)
    if train.n_rows == 0:
        raise FitError("empty training table")
    if not features:
        raise FitError("no features to train on")
    X = train.matrix(features)
    y = train.labels
    if len(np.unique(y)) < 2:
        raise FitError("training data contains a single class")
    est = make_estimator(spec).fit(X, y)
    return TrainedModel(spec.kind, spec.hyperparameters, features, est,
                        training_fingerprint=fingerprint(X, y))


def score(model: TrainedModel, x) -> np.ndarray | float:
    s = model.score(x)
    return float(s[0]) if np.ndim(x) == 1 else s


def predict(model: TrainedModel, x) -> np.ndarray | int:
    p = model.predict(x)
    return int(p[0]) if np.ndim(x) == 1 else p


# -- persistence -------------------------------------------------------------

def canonical_dumps(obj) -> bytes:
    """Pickle without the memo, so bytes depend only on values, not object identity.

    Whether equal strings or dtypes are shared objects depends on interning and on
    which process built them; with memoization that leaks into the bytes.
    """
    buf = io.BytesIO()
    p = pickle.Pickler(buf, protocol=4)
    p.fast = True
    p.dump(obj)
    return buf.getvalue()


def save_model(model, path, provenance: Mapping[str, Any] | None = None) -> None:
    """Write a JSON header line followed by the pickled model.

    The header makes the artifact self-describing without unpickling it.
    """
    header = model.header()
    if provenance:
        header["provenance"] = dict(provenance)
    blob = canonical_dumps(model)
    header["payload_sha256"] = hashlib.sha256(blob).hexdigest()
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob)


def read_header(path) -> dict:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
    if header.get("format") != ARTIFACT_FORMAT:
        raise ValueError(f"{path}: not a model artifact")
    return header


def load_model(path):
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    if header.get("format") != ARTIFACT_FORMAT:
        raise ValueError(f"{path}: not a model artifact")
    if header.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {header.get('version')}")
    if hashlib.sha256(blob).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload checksum mismatch")
    return pickle.loads(blob)


def with_scaler(model: TrainedModel, scaler: ScalerParams | None, background=None) -> TrainedModel:
    return replace(model, scaler=scaler, background=background)
