import dataclasses
import warnings

import pytest
from hypothesis import given, strategies as st

from topomgmt import cost as C
from topomgmt.cost import (CloudParams, EnergyParams, HardwareParams, MlCostParams, MonitoringCostParams,
                           SoftwareParams)

nonneg = st.floats(0, 1e6, allow_nan=False)
count = st.integers(0, 10_000)


def mon(hw=HardwareParams(), sw=SoftwareParams(), cloud=CloudParams()):
    return MonitoringCostParams(hw, sw, cloud)


# ---- hand-evaluated spot values


def test_hw_spot():
    assert C.cost_monitoring_solution("hw", mon(hw=HardwareParams(10, 500, 50))) == 5500


def test_sw_spot():
    assert C.cost_monitoring_solution("sw", mon(sw=SoftwareParams(2000, 1000, 3, 200, 300))) == 3900


def test_cloud_spot():
    assert C.cost_monitoring_solution("cloud", mon(cloud=CloudParams(1200, 50, 10, 100))) == 1800


@pytest.mark.parametrize("lam, mu, n, u", [(0, 1, 1, 0.0), (7, 7, 1, 1.0), (5, 10, 1, 0.5), (10, 10, 4, 0.25)])
def test_utilization(lam, mu, n, u):
    assert C.utilization(lam, mu, n) == u


def test_utilization_overload():
    with pytest.raises(C.UnstableQueueError):
        C.utilization(11, 10, 1)
    with pytest.raises(C.CostError):
        C.utilization(1, 0, 1)
    with pytest.raises(C.CostError):
        C.utilization(1, 1, 0)


@pytest.mark.parametrize("lam, expect", [(0.0, 0.22), (10.0, 0.12), (5.0, 0.17)])
def test_energy_spot(lam, expect):
    assert C.energy_total(EnergyParams(lam=lam, mu=10.0)) == pytest.approx(expect, rel=1e-12)


def test_energy_unstable_propagates():
    with pytest.raises(C.UnstableQueueError):
        C.energy_total(EnergyParams(lam=20, mu=10))


def test_hw_total_ignores_energy_with_warning():
    p = mon(hw=HardwareParams(10, 500, 50))
    assert C.cost_monitoring_total("hw", p) == 5500
    with pytest.warns(UserWarning, match="ignored"):
        assert C.cost_monitoring_total("hw", p, EnergyParams()) == 5500
    assert C.cost_monitoring_total("hw", p, EnergyParams(), energy_all_types=True) == pytest.approx(5720)


def test_cloud_total_adds_priced_energy():
    p = mon(cloud=CloudParams(1200, 50, 10, 100))
    assert C.cost_monitoring_total("cloud", p, EnergyParams(), factor=1000) == pytest.approx(1800 + 220)


def test_all_zero_is_zero():
    for kind in C.MONITORING_TYPES:
        assert C.cost_monitoring_total(kind, mon()) == 0


def test_ml_total_spots():
    p = MlCostParams(100, EnergyParams(), EnergyParams())
    assert C.cost_ml_total(p, 1000) == pytest.approx(540)
    assert C.cost_ml_total(dataclasses.replace(p, c_maintenance_ml=0), 1000) == pytest.approx(2 * 0.22 * 1000)
    assert C.cost_ml_total(p, 0) == 100


@pytest.mark.parametrize("bad", [
    lambda: HardwareParams(-1, 1, 1),
    lambda: SoftwareParams(c_vm=-0.5),
    lambda: CloudParams(c_storage=-1),
    lambda: EnergyParams(p_idle=-0.1),
    lambda: EnergyParams(n_server=0),
    lambda: MlCostParams(-5),
])
def test_negative_inputs_rejected(bad):
    with pytest.raises(C.CostError):
        bad()


def test_unknown_type():
    with pytest.raises(C.CostError):
        C.cost_monitoring_solution("fog", mon())


# ---- properties


def oracle_energy(p_idle, p_peak, e, n, lam, mu):
    u = lam / (n * mu)
    return n * (p_idle + (e - 1) * p_peak + (p_peak - p_idle) * u)


@given(count, nonneg, nonneg, st.integers(0, 10_000))
def test_hw_linear_in_devices(n, c, m, k):
    f = lambda n: C.cost_monitoring_solution("hw", mon(hw=HardwareParams(n, c, m)))
    assert f(n + k) - f(n) == pytest.approx(k * (c + m), rel=1e-9, abs=1e-6)


@given(count, count, nonneg, nonneg, nonneg, nonneg, nonneg, nonneg)
def test_monitoring_monotone_in_counts(n, k, a, b, c, d, e, f):
    lo, hi = n, n + k
    assert C.cost_monitoring_solution("hw", mon(hw=HardwareParams(lo, a, b))) <= \
        C.cost_monitoring_solution("hw", mon(hw=HardwareParams(hi, a, b)))
    assert C.cost_monitoring_solution("sw", mon(sw=SoftwareParams(a, b, lo, c, d))) <= \
        C.cost_monitoring_solution("sw", mon(sw=SoftwareParams(a, b, hi, c, d)))
    assert C.cost_monitoring_solution("cloud", mon(cloud=CloudParams(e, lo, f, a))) <= \
        C.cost_monitoring_solution("cloud", mon(cloud=CloudParams(e, hi, f, a)))


@given(st.floats(0, 5), st.floats(0, 5), st.floats(1, 3), st.integers(1, 50), st.floats(0, 1), st.floats(0.1, 1e4))
def test_energy_matches_oracle(p_idle, p_peak, e, n, frac, mu):
    lam = frac * n * mu
    got = C.energy_total(EnergyParams(p_idle, p_peak, e, n, lam, mu))
    assert got == pytest.approx(oracle_energy(p_idle, p_peak, e, n, lam, mu), rel=1e-9, abs=1e-12)


@given(st.integers(1, 50), st.integers(0, 50), st.floats(0, 1))
def test_energy_monotone_in_servers_at_fixed_load(n, k, frac):
    # utilization falls as servers are added; with the reference power values both effects raise the total
    lam = frac * n * 10.0
    a = C.energy_total(EnergyParams(n_server=n, lam=lam, mu=10.0))
    b = C.energy_total(EnergyParams(n_server=n + k, lam=lam, mu=10.0))
    assert b >= a - 1e-12


@given(st.floats(0, 1), st.floats(0, 1))
def test_energy_decreases_in_utilization_with_reference_values(u1, u2):
    lo, hi = sorted((u1, u2))
    e = lambda u: C.energy_total(EnergyParams(lam=u * 10.0, mu=10.0))
    assert e(hi) <= e(lo) + 1e-12


# ---- sweeps


def test_hw_and_cloud_slopes():
    cfg = C.default_cost_config()
    s = C.summarize(C.sweep("monitored_elements", range(1, 21), cfg))
    hw, cloud = cfg.monitoring.hw, cfg.monitoring.cloud
    assert s["hw"].slope == pytest.approx(hw.c_device + hw.c_maintenance_hw)
    assert s["cloud"].slope == pytest.approx(cloud.c_endpoint)
    assert s["sw"].slope == pytest.approx(cfg.monitoring.sw.c_vm)


def test_ml_curves_have_one_series_per_model():
    rows = C.sweep("inference_pods", range(1, 11), C.default_cost_config())
    assert set(C.series(rows)) == {"mlp", "forest", "gbt"}


def test_ml_slope_is_idle_power_per_pod():
    cfg = C.default_cost_config()
    for name, s in C.summarize(C.sweep("inference_pods", range(1, 11), cfg)).items():
        e = cfg.ml[name].inference
        assert s.slope == pytest.approx(cfg.factor * (e.p_idle + (e.e_usage - 1) * e.p_peak), rel=1e-9)


def test_sweep_errors():
    cfg = C.default_cost_config()
    with pytest.raises(C.CostError):
        C.sweep("monitored_elements", [], cfg)
    with pytest.raises(C.CostError):
        C.sweep("monitored_elements", [3, 2], cfg)
    with pytest.raises(C.CostError):
        C.sweep("pods", [1, 2], cfg)
    overloaded = C.cost_config_from_dict({"ml": {"request_rate": 1e12}})
    with pytest.raises(C.UnstableQueueError):
        C.sweep("inference_pods", [1, 2], overloaded)


def test_service_rate_from_timings():
    ml = C.ml_params_from_timings({"m": (2.0, 4.0)})
    assert ml["m"].train.mu == 0.5 and ml["m"].inference.mu == 250_000.0


def test_config_overlay_and_rejects_unknown():
    cfg = C.cost_config_from_dict({"monitoring": {"hw": {"c_device": 1.0}}, "factor": 2,
                                   "ml": {"timings": {"x": [1, 1]}}})
    assert cfg.monitoring.hw.c_device == 1.0 and cfg.monitoring.hw.n_device == 10
    assert cfg.factor == 2.0 and set(cfg.ml) == {"x"}
    with pytest.raises(C.CostError):
        C.cost_config_from_dict({"monitoring": {"hw": {"price": 1}}})
    with pytest.raises(C.CostError):
        C.cost_config_from_dict({"colour": 1})


def test_csv_and_svg(tmp_path):
    rows = C.sweep("monitored_elements", [1, 2, 3], C.default_cost_config())
    C.write_sweep(rows, tmp_path / "s.csv", tmp_path / "s.svg", title="t", xlabel="x")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "x,series,value" and len(lines) == 1 + 9
    svg = (tmp_path / "s.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count("<polyline") == 3


def test_no_warning_for_cloud_energy():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        C.cost_monitoring_total("cloud", mon(), EnergyParams())
