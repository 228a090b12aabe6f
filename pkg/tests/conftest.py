import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from topomgmt import dataset as D

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}" + (f"  ({detail})" if detail else ""))


def make_dataset(scenario: str, X, y, steps=None) -> D.Dataset:
    X = np.asarray(X, dtype=float)
    steps = np.arange(len(X)) if steps is None else steps
    return D.Dataset(scenario, D.SCHEMAS[scenario], steps, X, y, {"config_digest": "test", "seed": 0})


class Table:
    """Minimal X/y/feature_names container for model tests."""

    def __init__(self, X, y, names=None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.int64)
        self.feature_names = tuple(names or (f"f{i}" for i in range(self.X.shape[1])))

    def __len__(self):
        return len(self.y)

    def take(self, idx):
        return Table(self.X[idx], self.y[idx], self.feature_names)


class Scripted:
    """Stand-in model whose prediction is a fixed function of the input."""

    def __init__(self, fn, n_features=1, kind="scripted"):
        self.fn, self.n_features, self.kind, self.training_time = fn, n_features, kind, 0.0

    def predict(self, X):
        return np.array([self.fn(x) for x in np.asarray(X)], dtype=np.int64)

    def predict_one(self, x):
        return int(self.fn(x))


@pytest.fixture
def blobs():
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(-3, 0.5, (60, 2)), rng.normal(3, 0.5, (60, 2))])
    y = np.repeat([0, 1], 60)
    return Table(X, y)


@pytest.fixture
def four_class():
    rng = np.random.default_rng(11)
    centers = np.array([[0, 0], [4, 0], [0, 4], [4, 4]], dtype=float)
    X = np.vstack([rng.normal(c, 0.6, (50, 2)) for c in centers])
    y = np.repeat([0, 1, 2, 3], 50)
    return Table(X, y)
