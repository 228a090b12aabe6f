"""Monitoring-versus-ML cost model with an M/M/1 energy term.

Monitoring cost per solution type:

    hw    = n_device * (c_device + c_maintenance_hw)
    sw    = c_setup + c_subscription + n_vm * c_vm + c_maintenance_sw
    cloud = c_subscription + n_endpoint * c_endpoint + c_storage

Energy of ``n`` servers at utilization ``U = lam / (n * mu)``:

    E = n * ((p_idle + (e_usage - 1) * p_peak) + (p_peak - p_idle) * U)

ML cost is maintenance plus the energy of training and of inference, priced
with ``factor`` currency units per kW.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import warnings
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Any, Mapping, Sequence

MONITORING_TYPES = ("hw", "sw", "cloud")
AXES = ("monitored_elements", "inference_pods")
DEFAULT_FACTOR = 1000.0


class CostError(ValueError):
    pass


class UnstableQueueError(CostError):
    """Utilization above 1: the queue has no steady state."""


def _check_non_negative(obj) -> None:
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (int, float)) and not v >= 0:
            raise CostError(f"{type(obj).__name__}.{f.name} must be >= 0, got {v!r}")


@dataclass(frozen=True)
class HardwareParams:
    n_device: float = 0
    c_device: float = 0.0
    c_maintenance_hw: float = 0.0

    def __post_init__(self):
        _check_non_negative(self)


@dataclass(frozen=True)
class SoftwareParams:
    c_setup: float = 0.0
    c_subscription: float = 0.0
    n_vm: float = 0
    c_vm: float = 0.0
    c_maintenance_sw: float = 0.0

    def __post_init__(self):
        _check_non_negative(self)


@dataclass(frozen=True)
class CloudParams:
    c_subscription: float = 0.0
    n_endpoint: float = 0
    c_endpoint: float = 0.0
    c_storage: float = 0.0

    def __post_init__(self):
        _check_non_negative(self)


@dataclass(frozen=True)
class MonitoringCostParams:
    hw: HardwareParams = HardwareParams()
    sw: SoftwareParams = SoftwareParams()
    cloud: CloudParams = CloudParams()


@dataclass(frozen=True)
class EnergyParams:
    p_idle: float = 0.2
    p_peak: float = 0.1
    e_usage: float = 1.2
    n_server: float = 1
    lam: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        _check_non_negative(self)
        if not self.n_server >= 1:
            raise CostError("n_server must be >= 1")
        if not self.mu > 0:
            raise CostError("mu must be > 0")


@dataclass(frozen=True)
class MlCostParams:
    c_maintenance_ml: float = 0.0
    train: EnergyParams = EnergyParams()
    inference: EnergyParams = EnergyParams()

    def __post_init__(self):
        if not self.c_maintenance_ml >= 0:
            raise CostError("c_maintenance_ml must be >= 0")


def cost_monitoring_solution(kind: str, params: MonitoringCostParams) -> float:
    if kind == "hw":
        p = params.hw
        return p.n_device * (p.c_device + p.c_maintenance_hw)
    if kind == "sw":
        p = params.sw
        return p.c_setup + p.c_subscription + p.n_vm * p.c_vm + p.c_maintenance_sw
    if kind == "cloud":
        p = params.cloud
        return p.c_subscription + p.n_endpoint * p.c_endpoint + p.c_storage
    raise CostError(f"unknown monitoring type {kind!r}")


def utilization(lam: float, mu: float, n_server: float = 1) -> float:
    if not mu > 0:
        raise CostError("mu must be > 0")
    if not n_server >= 1:
        raise CostError("n_server must be >= 1")
    if lam < 0:
        raise CostError("arrival rate must be >= 0")
    u = lam / (n_server * mu)
    if u > 1:
        raise UnstableQueueError(f"utilization {u:.4g} > 1 (lambda={lam}, mu={mu}, servers={n_server})")
    return u


def energy_total(p: EnergyParams) -> float:
    """Power draw in kW of ``p.n_server`` servers."""
    u = utilization(p.lam, p.mu, p.n_server)
    return p.n_server * ((p.p_idle + (p.e_usage - 1.0) * p.p_peak) + (p.p_peak - p.p_idle) * u)


def cost_monitoring_total(kind: str, params: MonitoringCostParams, energy: EnergyParams | None = None,
                          factor: float = DEFAULT_FACTOR, energy_all_types: bool = False) -> float:
    """Solution cost plus priced energy.

    Energy is only counted for the cloud type unless ``energy_all_types`` is
    set; for other types a supplied energy term is ignored with a warning.
    """
    base = cost_monitoring_solution(kind, params)
    if energy is None:
        return base
    if kind != "cloud" and not energy_all_types:
        warnings.warn(f"energy term ignored for monitoring type {kind!r}", stacklevel=2)
        return base
    return base + factor * energy_total(energy)


def cost_ml_total(params: MlCostParams, factor: float = DEFAULT_FACTOR) -> float:
    return params.c_maintenance_ml + factor * (energy_total(params.train) + energy_total(params.inference))


# --------------------------------------------------------------------------
# default parameter set and sweeps

# (training time s, inference time us) per model kind, Scenario A reference run
REFERENCE_TIMINGS = {"mlp": (2.154, 0.24), "forest": (0.156, 7.3), "gbt": (0.279, 2.8)}


@dataclass(frozen=True)
class CostConfig:
    monitoring: MonitoringCostParams
    cloud_energy: EnergyParams | None
    ml: Mapping[str, MlCostParams]
    factor: float = DEFAULT_FACTOR
    energy_all_types: bool = False


def ml_params_from_timings(timings: Mapping[str, tuple[float, float]], c_maintenance_ml: float = 100.0,
                           train_rate: float = 1.0 / 3600.0, request_rate: float = 1e5,
                           energy: EnergyParams = EnergyParams()) -> dict[str, MlCostParams]:
    """Service rates are the reciprocals of measured training and inference times."""
    out = {}
    for name, (train_s, infer_us) in timings.items():
        if not (train_s > 0 and infer_us > 0):
            raise CostError(f"{name}: timings must be > 0")
        out[name] = MlCostParams(
            c_maintenance_ml,
            dataclasses.replace(energy, n_server=1, lam=train_rate, mu=1.0 / train_s),
            dataclasses.replace(energy, n_server=1, lam=request_rate, mu=1e6 / infer_us),
        )
    return out


def default_cost_config(timings: Mapping[str, tuple[float, float]] | None = None) -> CostConfig:
    monitoring = MonitoringCostParams(
        HardwareParams(n_device=10, c_device=6000.0, c_maintenance_hw=600.0),
        SoftwareParams(c_setup=2000.0, c_subscription=1000.0, n_vm=10, c_vm=300.0, c_maintenance_sw=500.0),
        CloudParams(c_subscription=1200.0, n_endpoint=10, c_endpoint=20.0, c_storage=300.0),
    )
    return CostConfig(monitoring, EnergyParams(lam=50.0, mu=100.0),
                      ml_params_from_timings(timings or REFERENCE_TIMINGS))


def _sub(cls, d: Mapping[str, Any] | None, base):
    if d is None:
        return base
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise CostError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    try:
        return dataclasses.replace(base, **{k: float(v) for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise CostError(f"bad {cls.__name__} value: {exc}") from None


def cost_config_from_dict(d: Mapping[str, Any] | None,
                          timings: Mapping[str, tuple[float, float]] | None = None) -> CostConfig:
    """Overlay a parsed params file on the defaults.

    Keys: ``monitoring`` (``hw``/``sw``/``cloud``), ``cloud_energy``,
    ``energy`` (shared p_idle/p_peak/e_usage), ``ml`` (``c_maintenance_ml``,
    ``train_rate``, ``request_rate``, ``timings``), ``factor``,
    ``energy_all_types``.
    """
    d = dict(d or {})
    unknown = set(d) - {"monitoring", "cloud_energy", "energy", "ml", "factor", "energy_all_types"}
    if unknown:
        raise CostError(f"unknown cost config keys {sorted(unknown)}")
    base = default_cost_config()
    mon = dict(d.get("monitoring") or {})
    if set(mon) - set(MONITORING_TYPES):
        raise CostError(f"unknown monitoring types {sorted(set(mon) - set(MONITORING_TYPES))}")
    monitoring = MonitoringCostParams(
        _sub(HardwareParams, mon.get("hw"), base.monitoring.hw),
        _sub(SoftwareParams, mon.get("sw"), base.monitoring.sw),
        _sub(CloudParams, mon.get("cloud"), base.monitoring.cloud),
    )
    energy = _sub(EnergyParams, d.get("energy"), EnergyParams())
    cloud_energy = base.cloud_energy
    if "cloud_energy" in d:
        ce = d["cloud_energy"]
        cloud_energy = None if ce is None else _sub(EnergyParams, ce, dataclasses.replace(
            energy, lam=base.cloud_energy.lam, mu=base.cloud_energy.mu))
    elif "energy" in d:
        cloud_energy = dataclasses.replace(energy, lam=base.cloud_energy.lam, mu=base.cloud_energy.mu)
    ml = dict(d.get("ml") or {})
    t = ml.pop("timings", None)
    if t is not None:
        timings = {k: (float(v[0]), float(v[1])) for k, v in t.items()}
    extra = set(ml) - {"c_maintenance_ml", "train_rate", "request_rate"}
    if extra:
        raise CostError(f"unknown ml cost keys {sorted(extra)}")
    ml_params = ml_params_from_timings(timings or REFERENCE_TIMINGS, energy=energy,
                                       **{k: float(v) for k, v in ml.items()})
    return CostConfig(monitoring, cloud_energy, ml_params, float(d.get("factor", DEFAULT_FACTOR)),
                      bool(d.get("energy_all_types", False)))


def _with_elements(p: MonitoringCostParams, n: float) -> MonitoringCostParams:
    return MonitoringCostParams(dataclasses.replace(p.hw, n_device=n), dataclasses.replace(p.sw, n_vm=n),
                                dataclasses.replace(p.cloud, n_endpoint=n))


def sweep(axis: str, xs: Sequence[float], cfg: CostConfig) -> list[tuple[float, str, float]]:
    """Cost curves as ``(x, series, value)`` rows.

    ``monitored_elements`` drives n_device / n_vm / n_endpoint of the three
    monitoring solutions; ``inference_pods`` drives the inference server
    count of every ML model.
    """
    xs = [float(x) for x in xs]
    if not xs:
        raise CostError("empty sweep range")
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise CostError("sweep range must be strictly ascending")
    rows = []
    if axis == "monitored_elements":
        if xs[0] < 0:
            raise CostError("element counts must be >= 0")
        for kind in MONITORING_TYPES:
            for x in xs:
                rows.append((x, kind, cost_monitoring_total(kind, _with_elements(cfg.monitoring, x),
                                                            cfg.cloud_energy if kind == "cloud" else None,
                                                            cfg.factor, cfg.energy_all_types)))
    elif axis == "inference_pods":
        if xs[0] < 1:
            raise CostError("pod counts must be >= 1")
        for name, p in cfg.ml.items():
            for x in xs:
                q = dataclasses.replace(p, inference=dataclasses.replace(p.inference, n_server=x))
                rows.append((x, name, cost_ml_total(q, cfg.factor)))
    else:
        raise CostError(f"unknown sweep axis {axis!r}")
    return rows


def series(rows: Sequence[tuple[float, str, float]]) -> dict[str, tuple[list[float], list[float]]]:
    out: dict[str, tuple[list[float], list[float]]] = {}
    for x, name, v in rows:
        xs, vs = out.setdefault(name, ([], []))
        xs.append(x)
        vs.append(v)
    return out


@dataclass(frozen=True)
class CurveSummary:
    slope: float
    # value at the first sweep point
    intercept: float
    max_second_difference: float


def summarize(rows: Sequence[tuple[float, str, float]]) -> dict[str, CurveSummary]:
    out = {}
    for name, (xs, vs) in series(rows).items():
        slope = (vs[-1] - vs[0]) / (xs[-1] - xs[0]) if len(xs) > 1 else 0.0
        d2 = 0.0
        for i in range(1, len(xs) - 1):
            # second divided difference, valid for uneven spacing too
            left = (vs[i] - vs[i - 1]) / (xs[i] - xs[i - 1])
            right = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i])
            d2 = max(d2, abs(right - left))
        out[name] = CurveSummary(slope, vs[0], d2)
    return out


def sweep_to_csv(rows: Sequence[tuple[float, str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "series", "value"))
    for x, name, v in rows:
        w.writerow((repr(x), name, repr(v)))
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(rows: Sequence[tuple[float, str, float]], title: str = "", xlabel: str = "",
               ylabel: str = "cost", width: int = 640, height: int = 400) -> str:
    """Line chart of the sweep as a standalone SVG document."""
    data = series(rows)
    allx = [x for xs, _ in data.values() for x in xs]
    ally = [v for _, vs in data.values() for v in vs]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(0.0, min(ally)), max(ally)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 70, 120, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{ml - 5}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    for k, (name, (xs, vs)) in enumerate(data.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(xs, vs))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = mt + 10 + 16 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_sweep(rows, csv_path: str | Path, svg_path: str | Path | None = None, **svg_kw) -> None:
    Path(csv_path).write_text(sweep_to_csv(rows), encoding="utf-8", newline="\n")
    if svg_path is not None:
        Path(svg_path).write_text(render_svg(rows, **svg_kw), encoding="utf-8", newline="\n")
