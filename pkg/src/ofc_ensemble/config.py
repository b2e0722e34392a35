"""Experiment configuration documents."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .classifiers import KINDS
from .rng import derive_int, stream
from .split import PartitionPlan


class ConfigError(ValueError):
    pass


RF_GRID = {
    "n_trees": (20, 40, 80, 100, 160),
    "criterion": ("gini", "information_gain"),
    "min_leaf": (1, 2, 5),
    "max_features": (6, 12, 24),
    "max_splits": ("N", "log2N"),
}

DEFAULT_HYPERPARAMETERS = {
    "naive_bayes": {},
    "logistic_regression": {},
    "svm": {"kernel": "rbf", "C": 1.0, "gamma": 0.1},
    "random_forest": {"n_trees": 100, "criterion": "gini", "min_leaf": 1, "max_splits": "N"},
    "lucck": {"lambda": 1.0, "theta": 1.0},
}


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter distributions; log-uniform bounds are (low, high)."""
    trials: int = 20
    svm_C: tuple[float, float] = (1e-3, 1e2)
    svm_gamma: tuple[float, float] = (1e-3, 1e2)
    svm_kernels: tuple[str, ...] = ("linear", "rbf")
    lucck_theta: tuple[float, float] = (1e-2, 1e3)
    lucck_lambda: tuple[float, float] = (1e-2, 1e4)
    random_forest: Mapping[str, tuple] = field(default_factory=lambda: dict(RF_GRID))

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"search.trials must be a positive integer, got {self.trials}")
        for name in ("svm_C", "svm_gamma", "lucck_theta", "lucck_lambda"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"search.{name} bounds must satisfy 0 < low <= high, got {(lo, hi)}")
        if not self.svm_kernels or set(self.svm_kernels) - {"linear", "rbf"}:
            raise ConfigError(f"search.svm_kernels must be drawn from linear/rbf, got {self.svm_kernels}")
        missing = set(RF_GRID) - set(self.random_forest)
        if missing:
            raise ConfigError(f"search.random_forest is missing {sorted(missing)}")
        object.__setattr__(self, "random_forest", {k: tuple(self.random_forest[k]) for k in RF_GRID})

    def candidates(self, kind: str, seed: int, shuffle: int) -> list[dict]:
        """Candidate hyperparameter maps in evaluation order.

        Randomized kinds draw trial ``t`` from its own stream
        ``(seed, "trial", shuffle, kind, t)``; random forest enumerates the grid.
        """
        if kind in ("naive_bayes", "logistic_regression"):
            return [dict(DEFAULT_HYPERPARAMETERS[kind])]
        if kind == "random_forest":
            forest_seed = derive_int(seed, "forest", shuffle)
            keys = list(RF_GRID)
            return [dict(zip(keys, combo), seed=forest_seed)
                    for combo in itertools.product(*(self.random_forest[k] for k in keys))]
        out = []
        for t in range(self.trials):
            rng = stream(seed, "trial", shuffle, kind, t)
            if kind == "svm":
                kernel = self.svm_kernels[int(rng.integers(len(self.svm_kernels)))]
                hp = {"kernel": kernel, "C": _log_uniform(rng, self.svm_C)}
                gamma = _log_uniform(rng, self.svm_gamma)
                if kernel == "rbf":
                    hp["gamma"] = gamma
            else:
                hp = {"theta": _log_uniform(rng, self.lucck_theta), "lambda": _log_uniform(rng, self.lucck_lambda)}
            out.append(hp)
        return out


def _log_uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "dataset"
    data: str | None = None
    schema: str | None = None
    partition: PartitionPlan = field(default_factory=PartitionPlan)
    features: int | str = "elbow"
    elbow_probe: str = "logistic_regression"
    elbow_max_k: int | None = None
    bins: int = 10
    models: tuple[str, ...] = KINDS
    smote: bool = True
    smote_k: int = 5
    search: SearchSpace = field(default_factory=SearchSpace)
    shap_background: int = 100
    shap_coalitions: int | None = None
    shap_max_samples: int | None = 50
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.features, str):
            if self.features != "elbow":
                raise ConfigError(f"features must be a positive integer or 'elbow', got {self.features!r}")
        elif int(self.features) != self.features or self.features < 1:
            raise ConfigError(f"features must be a positive integer or 'elbow', got {self.features!r}")
        if self.elbow_probe not in KINDS:
            raise ConfigError(f"elbow_probe must be one of {KINDS}")
        if self.elbow_max_k is not None and self.elbow_max_k < 3:
            raise ConfigError("elbow_max_k must be >= 3")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        unknown = [m for m in self.models if m not in KINDS]
        if unknown or not self.models:
            raise ConfigError(f"models must be a nonempty subset of {KINDS}, got {list(self.models)}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("models lists a kind twice")
        if self.smote_k < 1:
            raise ConfigError("smote.k_neighbors must be >= 1")
        if self.shap_background < 1:
            raise ConfigError("shap.background must be >= 1")
        if self.shap_max_samples is not None and self.shap_max_samples < 1:
            raise ConfigError("shap.max_samples must be >= 1")

    @property
    def seed(self) -> int:
        return self.partition.seed

    # -- documents ---------------------------------------------------------
    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any] | None) -> "PipelineConfig":
        doc = dict(doc or {})
        known = {"dataset", "data", "schema", "partition", "seed", "features", "elbow", "bins", "models",
                 "smote", "search", "shap", "output_dir"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        try:
            part = dict(doc.get("partition") or {})
            if "seed" in doc:
                part["seed"] = int(doc["seed"])
            plan = PartitionPlan(**part)
            search_doc = dict(doc.get("search") or {})
            search_kw: dict[str, Any] = {}
            if "trials" in search_doc:
                search_kw["trials"] = search_doc.pop("trials")
            svm = dict(search_doc.pop("svm", None) or {})
            for key, attr in (("C", "svm_C"), ("gamma", "svm_gamma")):
                if key in svm:
                    search_kw[attr] = tuple(float(v) for v in svm.pop(key))
            if "kernels" in svm:
                search_kw["svm_kernels"] = tuple(svm.pop("kernels"))
            lucck = dict(search_doc.pop("lucck", None) or {})
            for key, attr in (("theta", "lucck_theta"), ("lambda", "lucck_lambda")):
                if key in lucck:
                    search_kw[attr] = tuple(float(v) for v in lucck.pop(key))
            if "random_forest" in search_doc:
                grid = dict(RF_GRID)
                grid.update({k: tuple(v) for k, v in search_doc.pop("random_forest").items()})
                search_kw["random_forest"] = grid
            leftovers = set(search_doc) | set(svm) | set(lucck)
            if leftovers:
                raise ConfigError(f"unknown search keys {sorted(leftovers)}")
            elbow = dict(doc.get("elbow") or {})
            smote = doc.get("smote", {})
            if isinstance(smote, bool):
                smote = {"enabled": smote}
            shap = dict(doc.get("shap") or {})
            return cls(
                dataset=str(doc.get("dataset", "dataset")), data=doc.get("data"), schema=doc.get("schema"),
                partition=plan, features=doc.get("features", "elbow"),
                elbow_probe=elbow.get("probe", "logistic_regression"), elbow_max_k=elbow.get("max_k"),
                bins=int(doc.get("bins", 10)), models=tuple(doc.get("models", KINDS)),
                smote=bool(smote.get("enabled", True)), smote_k=int(smote.get("k_neighbors", 5)),
                search=SearchSpace(**search_kw), shap_background=int(shap.get("background", 100)),
                shap_coalitions=shap.get("coalitions"), shap_max_samples=shap.get("max_samples", 50),
                output_dir=doc.get("output_dir"))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_mapping(self) -> dict:
        return {
            "dataset": self.dataset, "data": self.data, "schema": self.schema,
            "partition": {k: v for k, v in asdict(self.partition).items() if k != "seed"},
            "seed": self.seed, "features": self.features,
            "elbow": {"probe": self.elbow_probe, "max_k": self.elbow_max_k},
            "bins": self.bins, "models": list(self.models),
            "smote": {"enabled": self.smote, "k_neighbors": self.smote_k},
            "search": {
                "trials": self.search.trials,
                "svm": {"C": list(self.search.svm_C), "gamma": list(self.search.svm_gamma),
                        "kernels": list(self.search.svm_kernels)},
                "lucck": {"theta": list(self.search.lucck_theta), "lambda": list(self.search.lucck_lambda)},
                "random_forest": {k: list(v) for k, v in self.search.random_forest.items()},
            },
            "shap": {"background": self.shap_background, "coalitions": self.shap_coalitions,
                     "max_samples": self.shap_max_samples},
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        doc = self.to_mapping()
        doc.pop("output_dir")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def provenance(self) -> list[str]:
        return [f"ofc-ensemble {__version__}", f"config_sha256={self.config_hash()}", f"seed={self.seed}"]

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not a valid key-value document ({exc})") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return PipelineConfig.from_mapping(doc)


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_mapping(), sort_keys=False), encoding="utf-8")
