"""Change-classifier families behind one interface: ``train``, ``predict``, ``save``, ``load``.

Three kinds are available: ``mlp`` (softmax network), ``forest`` (bagged
Gini trees with majority vote) and ``gbt`` (softmax gradient-boosted trees).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, ClassVar, Mapping, Union

import numpy as np

from . import mlp as _mlp
from . import trees as _trees

FORMAT = "topomgmt.model"
FORMAT_VERSION = 1
KINDS = ("mlp", "forest", "gbt")


class ModelError(ValueError):
    pass


class SchemaError(ModelError):
    pass


class ModelFormatError(ModelError):
    pass


@dataclass(frozen=True)
class MLPConfig:
    kind: ClassVar[str] = "mlp"
    hidden: tuple[int, ...] = (3, 8, 8)
    l2: float = 1e-5
    max_iter: int = 500
    tol: float = 1e-6
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden) or self.max_iter < 1:
            raise ModelError("hidden sizes and max_iter must be >= 1")


@dataclass(frozen=True)
class ForestConfig:
    kind: ClassVar[str] = "forest"
    n_trees: int = 40
    max_depth: int = 7
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ModelError("n_trees and max_depth must be >= 1")


@dataclass(frozen=True)
class GBTConfig:
    kind: ClassVar[str] = "gbt"
    n_trees: int = 40
    max_depth: int = 6
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    max_bins: int = 256

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ModelError("n_trees and max_depth must be >= 1")
        if self.max_bins < 2:
            raise ModelError("max_bins must be >= 2")


HyperConfig = Union[MLPConfig, ForestConfig, GBTConfig]
CONFIG_TYPES = {"mlp": MLPConfig, "forest": ForestConfig, "gbt": GBTConfig}


def default_hyper(kind: str, scenario: str = "A") -> HyperConfig:
    """The per-scenario settings the reference study settled on."""
    if kind == "gbt" and scenario.upper() == "B":
        return GBTConfig(n_trees=20, max_depth=2)
    return CONFIG_TYPES[kind]()


def hyper_from_dict(kind: str, d: Mapping[str, Any]) -> HyperConfig:
    if kind not in CONFIG_TYPES:
        raise ModelError(f"unknown model kind {kind!r}")
    d = dict(d)
    d.pop("kind", None)
    return CONFIG_TYPES[kind](**d)


def hyper_to_dict(cfg: HyperConfig) -> dict:
    d = dataclasses.asdict(cfg)
    if "hidden" in d:
        d["hidden"] = list(d["hidden"])
    return {"kind": cfg.kind, **d}


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    config: HyperConfig
    feature_names: tuple[str, ...]
    classes: np.ndarray
    params: Mapping[str, np.ndarray]
    seed: int = 0
    n_train: int = 0
    training_time: float | None = None
    train_loss: tuple[float, ...] = ()

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got {X.shape[-1]}")
        return X

    @cached_property
    def _ensemble(self) -> _trees.Ensemble:
        p = self.params
        return _trees.Ensemble(p["feature"], p["threshold"], p["left"], p["right"], p["value"], p["roots"],
                               int(self.config.max_depth))

    @cached_property
    def _layers(self):
        return [(self.params[f"W{i}"], self.params[f"b{i}"]) for i in range(len(self.config.hidden) + 1)]

    def predict_proba(self, X) -> np.ndarray:
        """Class scores (rows sum to 1), columns ordered like ``classes``."""
        X = self._check(X)
        one = X.ndim == 1
        X2 = X[None, :] if one else X
        if self.kind == "mlp":
            Z = (X2 - self.params["mean"]) / self.params["scale"]
            P = _mlp.predict_proba(self._layers, Z, self.config.activation)
        elif self.kind == "forest":
            P = _trees.forest_proba(self._ensemble, X2, len(self.classes))
        else:
            P = _trees.softmax(_trees.gbt_raw(self._ensemble, self.params["base"], X2))
        return P[0] if one else P

    def predict(self, X) -> np.ndarray | int:
        P = self.predict_proba(X)
        idx = np.argmax(P, axis=-1)
        out = self.classes[idx]
        return int(out) if np.ndim(out) == 0 else out

    def predict_one(self, x) -> int:
        """Fast path for a single feature vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise SchemaError(f"expected {self.n_features} features, got shape {x.shape}")
        if self.kind == "gbt":
            k = len(self.classes)
            raw = self.params["base"] + self._ensemble.leaf_values_one(x).reshape(-1, k).sum(axis=0)
            return int(self.classes[int(np.argmax(raw))])
        if self.kind == "forest":
            votes = self._ensemble.leaf_values_one(x).astype(np.int64)
            return int(self.classes[int(np.argmax(np.bincount(votes, minlength=len(self.classes))))])
        a = (x - self.params["mean"]) / self.params["scale"]
        layers = self._layers
        for W, b in layers[:-1]:
            a = np.tanh(a @ W + b) if self.config.activation == "tanh" else np.maximum(a @ W + b, 0.0)
        W, b = layers[-1]
        return int(self.classes[int(np.argmax(a @ W + b))])

    def tree_count(self) -> int:
        if self.kind == "mlp":
            return 0
        return len(self.params["roots"])

    def tree_depths(self) -> list[int]:
        return self._ensemble.tree_depths()


def train(kind: str, data, hyper: HyperConfig | None = None, seed: int = 0) -> TrainedModel:
    """Fit a model of ``kind`` on ``data`` (anything with ``X``, ``y``, ``feature_names``)."""
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}")
    hyper = hyper or CONFIG_TYPES[kind]()
    if hyper.kind != kind:
        raise ModelError(f"config for {hyper.kind!r} given to {kind!r}")
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y)
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise ModelError("need a non-empty 2-D feature matrix with one label per row")
    if not np.isfinite(X).all():
        raise ModelError("non-finite feature value")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ModelError("single-class data")
    y_idx = np.searchsorted(classes, y)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    params: dict[str, np.ndarray] = {}
    loss: list[float] = []
    if kind == "mlp":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        theta, sizes, loss = _mlp.fit((X - mean) / scale, y_idx, len(classes), hyper.hidden, hyper.l2,
                                      hyper.max_iter, hyper.tol, hyper.activation, rng)
        params["mean"], params["scale"] = mean, scale
        for i, (W, b) in enumerate(_mlp.unpack(theta, sizes)):
            params[f"W{i}"], params[f"b{i}"] = W.copy(), b.copy()
    elif kind == "forest":
        ens = _trees.fit_forest(X, y_idx, len(classes), hyper.n_trees, hyper.max_depth, rng,
                                hyper.min_samples_leaf)
        params.update(_ensemble_params(ens))
    else:
        ens, base, loss = _trees.fit_gbt(X, y_idx, len(classes), hyper.n_trees, hyper.max_depth,
                                         hyper.learning_rate, hyper.reg_lambda, hyper.min_child_weight,
                                         hyper.max_bins)
        params.update(_ensemble_params(ens))
        params["base"] = base
    elapsed = time.perf_counter() - start
    return TrainedModel(kind, hyper, tuple(data.feature_names), classes.astype(np.int64), params, seed, len(X),
                        elapsed, tuple(float(v) for v in loss))


def _ensemble_params(ens: _trees.Ensemble) -> dict[str, np.ndarray]:
    return {"feature": ens.feature, "threshold": ens.threshold, "left": ens.left, "right": ens.right,
            "value": ens.value, "roots": ens.roots}


def predict(model: TrainedModel, X):
    return model.predict(X)


# --------------------------------------------------------------------------
# model files


def _array_doc(a: np.ndarray) -> dict:
    a = np.asarray(a)
    dtype = "int64" if np.issubdtype(a.dtype, np.integer) else "float64"
    return {"dtype": dtype, "shape": list(a.shape), "data": a.ravel().tolist()}


def _params_digest(params_doc: dict) -> str:
    return hashlib.sha256(json.dumps(params_doc, sort_keys=True).encode()).hexdigest()


def model_to_dict(model: TrainedModel, evaluation: Mapping[str, Any] | None = None) -> dict:
    params_doc = {k: _array_doc(v) for k, v in sorted(model.params.items())}
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyper": hyper_to_dict(model.config),
        "features": list(model.feature_names),
        "classes": model.classes.tolist(),
        "params": params_doc,
        "params_sha256": _params_digest(params_doc),
        # wall-clock duration lives in the evaluation report so files stay reproducible
        "training": {"seed": model.seed, "n_train": model.n_train, "loss": list(model.train_loss)},
    }
    if evaluation is not None:
        doc["evaluation"] = dict(evaluation)
    return doc


def dumps(model: TrainedModel, evaluation: Mapping[str, Any] | None = None) -> str:
    return json.dumps(model_to_dict(model, evaluation), sort_keys=True, indent=1) + "\n"


def save(model: TrainedModel, path: str | Path, evaluation: Mapping[str, Any] | None = None) -> None:
    Path(path).write_text(dumps(model, evaluation), encoding="utf-8", newline="\n")


def model_from_dict(doc: Mapping[str, Any]) -> TrainedModel:
    if doc.get("format") != FORMAT:
        raise ModelFormatError(f"not a model file (format={doc.get('format')!r})")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {doc.get('format_version')!r}")
    try:
        params_doc = doc["params"]
        if _params_digest(params_doc) != doc["params_sha256"]:
            raise ModelFormatError("parameter checksum mismatch (corrupted file)")
        params = {}
        for k, a in params_doc.items():
            arr = np.array(a["data"], dtype=np.int64 if a["dtype"] == "int64" else float)
            params[k] = arr.reshape(a["shape"])
        kind = doc["kind"]
        hyper = hyper_from_dict(kind, doc["hyper"])
        tr = doc.get("training", {})
        return TrainedModel(kind, hyper, tuple(doc["features"]), np.array(doc["classes"], dtype=np.int64), params,
                            int(tr.get("seed", 0)), int(tr.get("n_train", 0)), None,
                            tuple(float(v) for v in tr.get("loss", ())))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupted model file: {exc}") from None


def load(path: str | Path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupted model file ({exc})") from None
    return model_from_dict(doc)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
