"""Prediction pipeline: scenario selection, grid search, training, evaluation,
Top-N selection and majority voting over the selected models."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import dataset as D
from . import models as M

LABELS = D.LABELS

# incoming field name -> dataset column
FIELD_ALIASES = {
    "x": "x_m", "x_m": "x_m",
    "y": "y_m", "y_m": "y_m",
    "throughput": "throughput_mbps", "throughput_mbps": "throughput_mbps",
    "rtt": "rtt_ms", "rtt_ms": "rtt_ms",
    "rssi": "rssi_dbm", "rssi_dbm": "rssi_dbm",
    "velocity": "velocity_mps", "velocity_mps": "velocity_mps",
}
_SCENARIO_KEYS = {"A": ("throughput_mbps", "rtt_ms"), "B": ("rssi_dbm", "velocity_mps")}


class PipelineError(ValueError):
    pass


class SelectionError(PipelineError):
    """A monitoring sample that maps to no scenario, or to both."""


# --------------------------------------------------------------------------
# scenario selection


def _normalize(sample: Mapping[str, Any]) -> dict[str, float]:
    out = {}
    for k, v in sample.items():
        col = FIELD_ALIASES.get(str(k).lower())
        if col is None or v is None:
            continue
        try:
            out[col] = float(v)
        except (TypeError, ValueError):
            raise SelectionError(f"field {k!r} is not numeric: {v!r}") from None
    return out


def select_scenario(sample: Mapping[str, Any]) -> tuple[str, np.ndarray]:
    """Map a monitoring sample to its scenario and ordered feature vector.

    Throughput plus RTT means scenario A and RSSI plus velocity means B.
    Samples carrying both sets, or neither, are rejected.
    """
    vals = _normalize(sample)
    hits = [sc for sc, keys in _SCENARIO_KEYS.items() if all(k in vals for k in keys)]
    if len(hits) > 1:
        raise SelectionError("ambiguous sample: carries both throughput/rtt and rssi/velocity")
    if not hits:
        raise SelectionError("unrecognized sample: needs throughput+rtt or rssi+velocity")
    sc = hits[0]
    cols = [c for c, _ in D.SCHEMAS[sc]]
    missing = [c for c in cols if c not in vals]
    if missing:
        raise SelectionError(f"scenario {sc} sample lacks {', '.join(missing)}")
    x = np.array([vals[c] for c in cols])
    if not np.isfinite(x).all():
        raise SelectionError("non-finite feature value")
    return sc, x


class ScenarioSelector:
    """Stateful front end that also drops samples whose features did not change.

    Change detection is per ``source`` (for example a UE id), so two
    stations reporting identical values do not suppress each other.
    """

    def __init__(self):
        self._last: dict[tuple[str, str], np.ndarray] = {}

    def select(self, sample: Mapping[str, Any], source: str = "") -> tuple[str, np.ndarray] | None:
        sc, x = select_scenario(sample)
        key = (source, sc)
        prev = self._last.get(key)
        if prev is not None and np.array_equal(prev, x):
            return None
        self._last[key] = x
        return sc, x


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    accuracy: float
    mse: float
    training_time: float | None
    inference_time: float | None
    # raw counts, rows = true label, columns = predicted label
    counts: tuple[tuple[int, ...], ...]
    kind: str = ""
    n_test: int = 0

    @property
    def confusion(self) -> list[list[float] | None]:
        return normalize_rows(np.array(self.counts))

    def recall(self, label: int) -> float | None:
        row = self.confusion[label]
        return None if row is None else row[label]

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "kind": self.kind, "accuracy": self.accuracy, "mse": self.mse,
                "training_time_s": self.training_time, "inference_time_us": self.inference_time,
                "n_test": self.n_test, "counts": [list(r) for r in self.counts],
                "confusion": self.confusion}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalReport":
        return cls(d["model_id"], float(d["accuracy"]), float(d["mse"]), d.get("training_time_s"),
                   d.get("inference_time_us"), tuple(tuple(int(v) for v in r) for r in d["counts"]),
                   d.get("kind", ""), int(d.get("n_test", 0)))


def confusion_counts(y_true, y_pred) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    k = len(LABELS)
    return np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k)


def normalize_rows(counts: np.ndarray) -> list[list[float] | None]:
    """Row-normalize; rows without support become ``None``."""
    out: list[list[float] | None] = []
    for row in np.asarray(counts):
        s = row.sum()
        out.append(None if s == 0 else (row / s).tolist())
    return out


def confusion_matrix(model: M.TrainedModel, data) -> list[list[float] | None]:
    return normalize_rows(confusion_counts(data.y, model.predict(data.X)))


def time_inference(predict_one: Callable[[np.ndarray], Any], X: np.ndarray, reps: int = 1000,
                   warmup: int = 100) -> float:
    """Median wall time of single-sample calls in microseconds."""
    n = len(X)
    for i in range(warmup):
        predict_one(X[i % n])
    samples = []
    clock = time.perf_counter_ns
    for i in range(reps):
        x = X[i % n]
        t0 = clock()
        predict_one(x)
        samples.append(clock() - t0)
    return statistics.median(samples) / 1000.0


def evaluate(model: M.TrainedModel, test_data, timing_reps: int = 1000, warmup: int = 100,
             model_id: str | None = None) -> EvalReport:
    X = np.asarray(test_data.X, dtype=float)
    y = np.asarray(test_data.y, dtype=np.int64)
    if len(y) == 0:
        raise PipelineError("empty test data")
    if X.shape[1] != model.n_features:
        raise M.SchemaError(f"test data has {X.shape[1]} features, model expects {model.n_features}")
    pred = np.asarray(model.predict(X), dtype=np.int64)
    counts = confusion_counts(y, pred)
    accuracy = int(np.trace(counts)) / len(y)
    mse = float(np.mean((pred - y) ** 2.0))
    inf = time_inference(model.predict_one, X, timing_reps, warmup) if timing_reps > 0 else None
    return EvalReport(model_id or model.kind, accuracy, mse, model.training_time, inf,
                      tuple(tuple(int(v) for v in r) for r in counts), model.kind, len(y))


# --------------------------------------------------------------------------
# hyperparameter search


def default_space(kind: str) -> list[M.HyperConfig]:
    if kind == "mlp":
        return [M.MLPConfig(hidden=h, l2=a) for h in ((8, 8), (3, 8, 8), (16, 16)) for a in (1e-5, 1e-3)]
    if kind == "forest":
        return [M.ForestConfig(n_trees=t, max_depth=d) for t in (20, 40) for d in (5, 7)]
    if kind == "gbt":
        return [M.GBTConfig(n_trees=t, max_depth=d) for t in (20, 40) for d in (2, 6)]
    raise M.ModelError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class GridCell:
    config: M.HyperConfig
    accuracy: float
    mse: float


def grid_scores(kind: str, space: Sequence[M.HyperConfig], train_data, validation_fraction: float = 0.2,
                seed: int = 0) -> list[GridCell]:
    if not space:
        raise PipelineError("empty hyperparameter space")
    fit, val = D.split(train_data, validation_fraction, "chronological")
    cells = []
    for cfg in space:
        model = M.train(kind, fit, cfg, seed)
        pred = np.asarray(model.predict(val.X), dtype=np.int64)
        y = np.asarray(val.y, dtype=np.int64)
        cells.append(GridCell(cfg, int((pred == y).sum()) / len(y), float(np.mean((pred - y) ** 2.0))))
    return cells


def grid_search(kind: str, space: Sequence[M.HyperConfig], train_data, validation_fraction: float = 0.2,
                seed: int = 0) -> M.HyperConfig:
    """Best validation accuracy, then lower MSE, then enumeration order."""
    if len(space) == 1:
        return space[0]
    cells = grid_scores(kind, space, train_data, validation_fraction, seed)
    best = min(range(len(cells)), key=lambda i: (-cells[i].accuracy, cells[i].mse, i))
    return cells[best].config


# --------------------------------------------------------------------------
# Top-N and voting


@dataclass(frozen=True)
class TopN:
    entries: tuple[tuple[M.TrainedModel, EvalReport], ...]

    def __post_init__(self):
        if not self.entries:
            raise PipelineError("TopN needs at least one model")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def models(self) -> list[M.TrainedModel]:
        return [m for m, _ in self.entries]

    @property
    def reports(self) -> list[EvalReport]:
        return [r for _, r in self.entries]


def rank_key(report: EvalReport) -> tuple[float, float]:
    return (-report.accuracy, report.mse)


def select_top_n(reports: Iterable[tuple[M.TrainedModel, EvalReport]], n: int) -> TopN:
    items = list(reports)
    if not items:
        raise PipelineError("no models to select from")
    if n < 1:
        raise PipelineError("N must be >= 1")
    ranked = sorted(items, key=lambda mr: rank_key(mr[1]))
    return TopN(tuple(ranked[:n]))


def vote_labels(ranked_votes: Sequence[int]) -> int:
    """Majority label; ties go to the tied label voted by the best-ranked model."""
    if not ranked_votes:
        raise PipelineError("no votes")
    counts: dict[int, int] = {}
    for v in ranked_votes:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    for v in ranked_votes:
        if counts[v] == top:
            return v
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class VoteDetail:
    label: int
    votes: tuple[tuple[str, int, int], ...]  # (model id, rank, label)

    def to_dict(self) -> dict:
        return {"label": self.label,
                "votes": [{"model": m, "rank": r, "label": v} for m, r, v in self.votes]}


def vote_detail(top: TopN, x) -> VoteDetail:
    x = np.asarray(x, dtype=float)
    votes = tuple((rep.model_id, rank, model.predict_one(x))
                  for rank, (model, rep) in enumerate(top.entries, start=1))
    return VoteDetail(vote_labels([v for _, _, v in votes]), votes)


def vote(top: TopN, x) -> int:
    return vote_detail(top, x).label


# --------------------------------------------------------------------------
# end to end


@dataclass
class PipelineResult:
    scenario: str
    window: tuple[int, int]
    top: TopN
    reports: dict[str, EvalReport]
    models: dict[str, M.TrainedModel]
    hyper: dict[str, M.HyperConfig]
    n_train: int
    n_test: int
    provenance: dict = field(default_factory=dict)


def run_pipeline(ds: D.Dataset, scenario: str | None = None, n: int = 3, kinds: Sequence[str] = M.KINDS,
                 seed: int = 0, test_fraction: float = 0.2, window: tuple[int, int] | None = None,
                 spaces: Mapping[str, Sequence[M.HyperConfig]] | None = None, grid: bool = True,
                 timing_reps: int = 1000) -> PipelineResult:
    """Split, search, train, evaluate and rank.

    With ``grid=False`` each kind trains on its reference settings for the
    scenario instead of searching ``spaces``.
    """
    scenario = (scenario or ds.scenario).upper()
    if scenario != ds.scenario:
        raise PipelineError(f"dataset holds scenario {ds.scenario} data, not {scenario}")
    if not kinds:
        raise PipelineError("no model kinds requested")
    w, h = window or D.DEFAULT_WINDOW[scenario]
    data = D.window(ds, w, h)
    train_data, test_data = D.split(data, test_fraction, "chronological")
    reports, models, hyper = {}, {}, {}
    for kind in kinds:
        if grid:
            space = list((spaces or {}).get(kind) or default_space(kind))
            cfg = grid_search(kind, space, train_data, 0.2, seed)
        else:
            cfg = M.default_hyper(kind, scenario)
        model = M.train(kind, train_data, cfg, seed)
        hyper[kind] = cfg
        models[kind] = model
        reports[kind] = evaluate(model, test_data, timing_reps, model_id=kind)
    top = select_top_n([(models[k], reports[k]) for k in kinds], n)
    return PipelineResult(scenario, (w, h), top, reports, models, hyper, len(train_data), len(test_data),
                          dict(ds.provenance))


# --------------------------------------------------------------------------
# report and model-set files

TABLE_COLUMNS = ("model", "accuracy", "mse", "training_time_s", "inference_time_us")


def table_rows(reports: Iterable[EvalReport]) -> list[tuple]:
    return [(r.model_id, r.accuracy, r.mse, r.training_time, r.inference_time) for r in reports]


def write_table_csv(reports: Iterable[EvalReport], path: str | Path) -> None:
    def cell(v):
        if v is None:
            return ""
        return repr(float(v)) if isinstance(v, float) else str(v)

    lines = [",".join(TABLE_COLUMNS)]
    lines += [",".join(cell(v) for v in row) for row in table_rows(reports)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def format_table(reports: Iterable[EvalReport]) -> str:
    """Fixed-width text table, metrics rounded to 3 decimals for display."""
    out = [f"{'model':<8} {'accuracy':>9} {'mse':>7} {'train[s]':>9} {'infer[us]':>10}"]
    for mid, acc, mse, tt, it in table_rows(reports):
        tt_s = "-" if tt is None else f"{tt:.3f}"
        it_s = "-" if it is None else f"{it:.1f}"
        out.append(f"{mid:<8} {acc:>9.3f} {mse:>7.3f} {tt_s:>9} {it_s:>10}")
    return "\n".join(out)


def result_to_dict(result: PipelineResult, include_timings: bool = True) -> dict:
    reps = {}
    for k, r in result.reports.items():
        d = r.to_dict()
        if not include_timings:
            d.pop("training_time_s")
            d.pop("inference_time_us")
        reps[k] = d
    return {
        "scenario": result.scenario,
        "window": list(result.window),
        "label_names": list(D.LABEL_NAMES[result.scenario]),
        "n_train": result.n_train,
        "n_test": result.n_test,
        "hyper": {k: M.hyper_to_dict(c) for k, c in result.hyper.items()},
        "reports": reps,
        "top_n": [r.model_id for r in result.top.reports],
        "provenance": result.provenance,
    }


TOPN_FILE = "topn.json"


def save_model_set(result: PipelineResult, out_dir: str | Path) -> list[Path]:
    """Write one model file per kind plus the Top-N index; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, model in result.models.items():
        p = out_dir / f"{result.scenario.lower()}_{kind}.json"
        rep = result.reports[kind].to_dict()
        M.save(model, p, evaluation={k: rep[k] for k in ("accuracy", "mse", "n_test", "counts")})
        written.append(p)
    index = {
        "scenario": result.scenario,
        "window": list(result.window),
        "models": [{"id": r.model_id, "rank": i, "file": f"{result.scenario.lower()}_{r.model_id}.json",
                    "accuracy": r.accuracy, "mse": r.mse}
                   for i, r in enumerate(result.top.reports, start=1)],
    }
    p = out_dir / TOPN_FILE
    p.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    written.append(p)
    return written


@dataclass(frozen=True)
class ModelSet:
    scenario: str
    window: tuple[int, int]
    top: TopN
    digests: dict[str, str]


def load_model_set(index_path: str | Path) -> ModelSet:
    """Load a Top-N index (a ``topn.json`` file or a directory holding one)."""
    index_path = Path(index_path)
    if index_path.is_dir():
        index_path = index_path / TOPN_FILE
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
        entries, digests = [], {}
        for e in sorted(index["models"], key=lambda e: e["rank"]):
            p = index_path.parent / e["file"]
            model = M.load(p)
            digests[e["id"]] = M.file_digest(p)
            rep = EvalReport(e["id"], float(e["accuracy"]), float(e["mse"]), None, None,
                             ((0,) * 4,) * 4, model.kind)
            entries.append((model, rep))
        w, h = index["window"]
        return ModelSet(index["scenario"].upper(), (int(w), int(h)), TopN(tuple(entries)), digests)
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, M.ModelError):
            raise
        raise PipelineError(f"{index_path}: cannot load model set ({exc})") from None


def window_features(history: Sequence[np.ndarray], w: int) -> np.ndarray | None:
    """Flatten the last ``w`` samples (oldest first), or None while too short."""
    if len(history) < w:
        return None
    return np.concatenate(list(history)[-w:])

