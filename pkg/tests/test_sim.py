import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topomgmt import sim
from topomgmt.sim import LinkState, MobilityState, PropagationModel


# ---- rssi_at


def test_rssi_reference_distance():
    p = PropagationModel()
    assert sim.rssi_at(p, (0, 0), (1, 0)) == pytest.approx(p.tx_power - p.pl_d0)


@pytest.mark.parametrize("d, drop", [(2.0, 50 * math.log10(2)), (10.0, 50.0)])
def test_rssi_closed_form(d, drop):
    p = PropagationModel(exponent=5)
    ref = p.tx_power - p.pl_d0
    assert sim.rssi_at(p, (0, 0), (0, d)) == pytest.approx(ref - drop, abs=1e-9)


def test_rssi_two_d0_drop_value():
    p = PropagationModel(exponent=5)
    assert p.tx_power - p.pl_d0 - sim.rssi_at(p, (0, 0), (2, 0)) == pytest.approx(15.0515, abs=1e-4)


def test_rssi_clamps_below_d0():
    p = PropagationModel(d0=1.0)
    assert sim.rssi_at(p, (5, 5), (5, 5)) == sim.rssi_at(p, (5, 5), (5.5, 5))


@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0))
def test_rssi_monotone_without_noise(a, b):
    p = PropagationModel(noise_sigma=0.0)
    lo, hi = sorted((a, b))
    assert sim.rssi_at(p, (0, 0), (hi, 0)) <= sim.rssi_at(p, (0, 0), (lo, 0))


def test_rssi_noise_uses_rng():
    p = PropagationModel(noise_sigma=2.0)
    a = sim.rssi_at(p, (0, 0), (10, 0), np.random.default_rng(1))
    b = sim.rssi_at(p, (0, 0), (10, 0), np.random.default_rng(1))
    assert a == b != sim.rssi_at(p, (0, 0), (10, 0))


def test_propagation_rejects_bad_exponent():
    with pytest.raises(sim.SimConfigError):
        PropagationModel(exponent=0)


# ---- mobility


def test_unit_speed_moves_exactly_one_metre():
    rng = np.random.default_rng(3)
    s = MobilityState((100.0, 100.0), 1.0, (0.0, 0.0), (200.0, 200.0), 1.0, 1.0)
    for _ in range(200):
        n = sim.step_mobility(s, rng)
        assert math.dist(n.position, s.position) == pytest.approx(1.0, abs=1e-9)
        s = n


@given(st.integers(0, 2**31 - 1))
def test_step_stays_in_bounds_and_direction_in_range(seed):
    rng = np.random.default_rng(seed)
    s = MobilityState((0.5, 199.5), 1.0, (0.0, 0.0), (200.0, 200.0), 1.0, 5.0)
    for _ in range(30):
        s = sim.step_mobility(s, rng)
        assert 0 <= s.position[0] <= 200 and 0 <= s.position[1] <= 200
        assert all(-1 <= c <= 1 for c in s.direction)
        assert 1.0 <= s.velocity <= 5.0


def test_trajectory_repeats_for_same_seed():
    def walk(seed):
        rng = np.random.default_rng(seed)
        s = MobilityState((100.0, 100.0), 1.0, (0.0, 0.0))
        out = []
        for _ in range(10000):
            s = sim.step_mobility(s, rng)
            out.append(s.position)
        return out

    assert walk(5) == walk(5)


# ---- link metrics


def test_bandwidth_cap_binds():
    link = LinkState(bandwidth=0.1, active_degradation="bandwidth")
    for seed in range(50):
        tput, _ = sim.synth_link_metrics(link, 30.0, np.random.default_rng(seed))
        assert 0 < tput <= 0.1


def test_unconstrained_path_hits_bandwidth():
    params = sim.LinkSynthParams(jitter=0.0)
    tput, _ = sim.synth_link_metrics(LinkState(bandwidth=10.0, delay=0.0, loss=0.0), 0.0, params=params)
    assert tput == 10.0


def test_delay_lower_bounds_rtt():
    _, rtt = sim.synth_link_metrics(LinkState(delay=100.0), 0.0)
    assert rtt >= 200.0


@given(st.floats(0.01, 1000.0), st.floats(0.0, 500.0), st.floats(0.0, 1.0), st.floats(0.0, 300.0),
       st.integers(0, 1000))
def test_link_metric_bounds(bw, delay, loss, dist, seed):
    tput, rtt = sim.synth_link_metrics(LinkState(bw, delay, loss), dist, np.random.default_rng(seed))
    assert 0 < tput <= bw
    assert rtt >= 2 * delay


# ---- labels


@pytest.mark.parametrize("kind, label", [("none", 0), ("bandwidth", 1), ("loss", 2), ("delay", 3)])
def test_label_a(kind, label):
    assert sim.label_scenario_a(LinkState(active_degradation=kind)) == label


@pytest.mark.parametrize("prev, now, label", [(True, True, 0), (True, False, 1), (False, False, 2),
                                              (False, True, 3)])
def test_label_b(prev, now, label):
    assert sim.label_scenario_b(prev, now) == label


# ---- runs


def test_scenario_a_shape():
    ds = sim.run_scenario(sim.default_config("A", 0))
    assert len(ds) == 5000
    assert ds.columns == ("x_m", "y_m", "throughput_mbps", "rtt_ms")
    assert set(np.unique(ds.y)) == {0, 1, 2, 3}


def test_scenario_b_shape():
    ds = sim.run_scenario(sim.default_config("B", 0))
    assert len(ds) == 10000
    assert ds.columns == ("x_m", "y_m", "rssi_dbm", "velocity_mps")


@pytest.mark.parametrize("sc", ["A", "B"])
def test_single_iteration(sc):
    ds = sim.run_scenario(dataclasses.replace(sim.default_config(sc), iterations=1))
    assert len(ds) == 1 and ds.y.tolist() == [0]


def test_run_is_bit_identical():
    a = sim.run_scenario(sim.default_config("B", 4))
    b = sim.run_scenario(sim.default_config("B", 4))
    assert a == b and a.X.tobytes() == b.X.tobytes()
    assert a != sim.run_scenario(sim.default_config("B", 5))


def test_overlapping_schedule_rejected():
    eps = (sim.Episode(10, 20, "loss"), sim.Episode(25, 5, "delay"))
    cfg = dataclasses.replace(sim.default_config("A"), iterations=100,
                              link=dataclasses.replace(sim.ScenarioAParams(), episodes=eps))
    with pytest.raises(sim.SimConfigError, match="overlapping"):
        sim.run_scenario(cfg)


def test_explicit_schedule_sets_labels():
    eps = (sim.Episode(10, 5, "bandwidth"), sim.Episode(30, 5, "delay"))
    cfg = dataclasses.replace(sim.default_config("A"), iterations=50,
                              link=dataclasses.replace(sim.ScenarioAParams(), episodes=eps))
    ds = sim.run_scenario(cfg)
    expect = np.zeros(50, dtype=int)
    expect[10:15] = 1
    expect[30:35] = 3
    assert ds.y.tolist() == expect.tolist()
    assert (ds.X[10:15, 2] <= 0.1).all()
    assert (ds.X[30:35, 3] >= 200.0).all()


def test_scenario_a_measurements_respect_link():
    cfg = sim.default_config("A", 1)
    ds = sim.run_scenario(cfg)
    tput, rtt = ds.X[:, 2], ds.X[:, 3]
    assert (tput[ds.y == 1] <= cfg.link.degraded_bandwidth).all()
    assert (tput <= cfg.link.baseline.bandwidth).all()
    assert (rtt[ds.y == 3] >= 2 * cfg.link.degraded_delay).all()


ALLOWED_PREV = {0: {0, 3}, 1: {0, 3}, 2: {1, 2}, 3: {1, 2}}


def assert_valid_walk(labels):
    for prev, cur in zip(labels, labels[1:]):
        assert prev in ALLOWED_PREV[cur], (prev, cur)


@settings(max_examples=10)
@given(st.integers(0, 10**6))
def test_b_labels_walk_transition_graph(seed):
    cfg = dataclasses.replace(sim.default_config("B", seed), iterations=2000)
    assert_valid_walk(sim.run_scenario(cfg).y.tolist())


def test_b_labels_follow_distance():
    cfg = sim.default_config("B", 2)
    ds = sim.run_scenario(cfg)
    inside = np.hypot(ds.X[:, 0] - cfg.ap_position[0], ds.X[:, 1] - cfg.ap_position[1]) <= cfg.coverage_radius
    expect = [0] + [sim.label_scenario_b(a, b) for a, b in zip(inside[:-1], inside[1:])]
    assert ds.y.tolist() == expect


def test_rssi_threshold_agrees_with_distance():
    cfg = sim.default_config("B", 6)
    ds = sim.run_scenario(cfg)
    thr = sim.rssi_at(cfg.propagation, cfg.ap_position,
                      (cfg.ap_position[0] + cfg.coverage_radius, cfg.ap_position[1]))
    by_rssi = ds.X[:, 2] >= thr
    by_dist = np.hypot(ds.X[:, 0] - cfg.ap_position[0], ds.X[:, 1] - cfg.ap_position[1]) <= cfg.coverage_radius
    # exact equality can only break on the boundary circle itself
    dist = np.hypot(ds.X[:, 0] - cfg.ap_position[0], ds.X[:, 1] - cfg.ap_position[1])
    edge = np.isclose(dist, cfg.coverage_radius, atol=1e-9)
    assert (by_rssi == by_dist)[~edge].all()


def test_config_from_dict_overrides_and_rejects_unknown():
    cfg = sim.config_from_dict({"scenario": "B", "iterations": 20, "propagation": {"exponent": 3}})
    assert cfg.iterations == 20 and cfg.propagation.exponent == 3.0
    with pytest.raises(sim.SimConfigError):
        sim.config_from_dict({"scenario": "B", "bogus": 1})
    with pytest.raises(sim.SimConfigError):
        sim.config_from_dict({"scenario": "C"})
    with pytest.raises(sim.SimConfigError):
        sim.config_from_dict({"iterations": 0})
