"""Labeled sample containers, windowing, splitting and the CSV file format."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

# column name -> unit
SCHEMAS: dict[str, tuple[tuple[str, str], ...]] = {
    "A": (("x_m", "m"), ("y_m", "m"), ("throughput_mbps", "Mbit/s"), ("rtt_ms", "ms")),
    "B": (("x_m", "m"), ("y_m", "m"), ("rssi_dbm", "dBm"), ("velocity_mps", "m/s")),
}
LABEL_NAMES = {
    "A": ("No_Chg", "BW", "LOSS", "Delay"),
    "B": ("inside", "exit", "outside", "re-enter"),
}
LABELS = (0, 1, 2, 3)
# detection for A, one-step-ahead prediction for B
DEFAULT_WINDOW = {"A": (1, 0), "B": (10, 1)}


class DatasetError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    scenario: str
    schema: tuple[tuple[str, str], ...]
    steps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        steps = np.asarray(self.steps, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise DatasetError(f"feature matrix shape {X.shape} does not match schema of {len(self.schema)} columns")
        if not (len(y) == len(X) == len(steps)):
            raise DatasetError("features, labels and steps differ in length")
        if len(y) and not np.isin(y, LABELS).all():
            raise DatasetError("labels must lie in {0,1,2,3}")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "steps", _frozen(steps))
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.schema)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.columns

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.scenario, self.schema, self.steps[idx], self.X[idx], self.y[idx], self.provenance)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.scenario == other.scenario and self.schema == other.schema
                and np.array_equal(self.steps, other.steps) and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y) and dict(self.provenance) == dict(other.provenance))


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    scenario: str
    base_columns: tuple[str, ...]
    window: int
    horizon: int
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=np.int64)))

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self.window == 1:
            return self.base_columns
        return tuple(f"{c}[t-{self.window - 1 - k}]" for k in range(self.window) for c in self.base_columns)

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        return WindowedDataset(self.scenario, self.base_columns, self.window, self.horizon,
                               self.X[idx], self.y[idx])


def window(ds: Dataset, w: int, h: int) -> WindowedDataset:
    """Row i holds samples i..i+w-1 (oldest first) and the label of sample i+w-1+h."""
    if w < 1 or h < 0:
        raise DatasetError("need window >= 1 and horizon >= 0")
    n = len(ds)
    if n <= w + h and not (w == 1 and h == 0 and n >= 1):
        raise DatasetError(f"{n} rows are too few for window {w} and horizon {h}")
    m = n - w - h + 1
    X = np.lib.stride_tricks.sliding_window_view(ds.X, (w, ds.X.shape[1]))[:m, 0].reshape(m, -1)
    y = ds.y[w - 1 + h: w - 1 + h + m]
    return WindowedDataset(ds.scenario, ds.columns, w, h, X, y)


def split(ds, test_fraction: float = 0.2, mode: str = "chronological", seed: int = 0):
    """Return (train, test); chronological mode puts the most recent rows in test."""
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must lie in (0, 1)")
    n = len(ds)
    if n < 2:
        raise DatasetError("dataset too small to split (< 2 rows)")
    n_test = min(max(math.ceil(test_fraction * n - 1e-9), 1), n - 1)
    if mode == "chronological":
        idx = np.arange(n)
    elif mode == "shuffled":
        idx = np.random.default_rng(seed).permutation(n)
    else:
        raise DatasetError(f"unknown split mode {mode!r}")
    return ds.take(np.sort(idx[: n - n_test]) if mode == "chronological" else idx[: n - n_test]), \
        ds.take(idx[n - n_test:])


# --------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path: str | Path, sidecar: bool = True) -> None:
    cols = ("step", *ds.columns, "label")
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for s, row, lab in zip(ds.steps.tolist(), ds.X.tolist(), ds.y.tolist()):
        buf.write(",".join([str(s), *map(_fmt, row), str(lab)]) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    if sidecar:
        meta = {"scenario": ds.scenario, "columns": list(ds.columns), "units": [u for _, u in ds.schema],
                "rows": len(ds), **ds.provenance}
        provenance_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def provenance_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".provenance.json")


def read_csv(path: str | Path, scenario: str | None = None) -> Dataset:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file, header row required")
    header = tuple(lines[0].split(","))
    found = None
    for sc, schema in SCHEMAS.items():
        if header == ("step", *(c for c, _ in schema), "label"):
            found = sc
    if found is None:
        raise DatasetError(f"{path}: header {','.join(header)!r} matches no known schema")
    if scenario is not None and scenario.upper() != found:
        raise DatasetError(f"{path}: file holds scenario {found} data, expected {scenario.upper()}")
    n = len(lines) - 1
    steps = np.empty(n, dtype=np.int64)
    X = np.empty((n, len(header) - 2))
    y = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DatasetError(f"{path}:{i + 2}: expected {len(header)} cells, got {len(cells)}")
        try:
            steps[i] = int(cells[0])
            X[i] = [float(c) for c in cells[1:-1]]
            lab = int(cells[-1])
        except ValueError as exc:
            raise DatasetError(f"{path}:{i + 2}: non-numeric cell ({exc})") from None
        if lab not in LABELS:
            raise DatasetError(f"{path}:{i + 2}: unknown label {lab}")
        y[i] = lab
    if not np.isfinite(X).all():
        raise DatasetError(f"{path}: non-finite feature value")
    prov = {}
    side = provenance_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        prov = {k: meta[k] for k in ("config_digest", "seed") if k in meta}
    return Dataset(found, SCHEMAS[found], steps, X, y, prov)
