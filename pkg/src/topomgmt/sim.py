"""Discrete-time simulator for the two topology-change scenarios.

Scenario A: a UE behind a backhaul link measures throughput and RTT while the
link is periodically degraded (bandwidth, loss or delay bottleneck).
Scenario B: a UE random-walks around an access point; RSSI follows a
log-distance path-loss model and the label tracks coverage transitions.

Every run is a pure function of its :class:`SimConfig`.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import Dataset, SCHEMAS

DEGRADATIONS = ("none", "bandwidth", "loss", "delay")


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationModel:
    d0: float = 1.0
    pl_d0: float = 40.0
    exponent: float = 5.0
    tx_power: float = 20.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.exponent > 0 or not self.d0 > 0:
            raise SimConfigError("propagation: exponent and d0 must be > 0")


@dataclass(frozen=True)
class MobilityState:
    position: tuple[float, float]
    velocity: float
    direction: tuple[float, float]
    bounds: tuple[float, float] = (200.0, 200.0)
    v_min: float = 1.0
    v_max: float = 5.0
    step_dt: float = 1.0


@dataclass(frozen=True)
class LinkState:
    bandwidth: float = 100.0
    delay: float = 0.0
    loss: float = 0.0
    active_degradation: str = "none"

    def __post_init__(self):
        if self.active_degradation not in DEGRADATIONS:
            raise SimConfigError(f"unknown degradation {self.active_degradation!r}")


@dataclass(frozen=True)
class LinkSynthParams:
    """Constants of the throughput/RTT generator."""

    mss_bytes: float = 1460.0
    mathis_k: float = math.sqrt(1.5)
    loss_floor: float = 1e-4
    base_delay_ms: float = 1.0
    alpha_ms_per_m: float = 0.01
    jitter: float = 0.05


@dataclass(frozen=True)
class Episode:
    onset: int
    duration: int
    kind: str


@dataclass(frozen=True)
class ScenarioAParams:
    baseline: LinkState = LinkState()
    # bottleneck values applied while an episode is active
    degraded_bandwidth: float = 0.1
    degraded_loss: float = 0.6
    degraded_delay: float = 100.0
    synth: LinkSynthParams = LinkSynthParams()
    gap_range: tuple[int, int] = (50, 150)
    duration_range: tuple[int, int] = (40, 120)
    # explicit schedule; when empty a random one is drawn from the seed
    episodes: tuple[Episode, ...] = ()
    # loss episodes are bursty: two-state chain, lossy only in the bad state
    loss_p_good_to_bad: float = 0.5
    loss_p_bad_to_good: float = 0.25


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "A"
    iterations: int = 5000
    seed: int = 0
    step_dt: float = 1.0
    arena: tuple[float, float] = (200.0, 200.0)
    ap_position: tuple[float, float] = (100.0, 100.0)
    start_position: tuple[float, float] | None = None
    coverage_radius: float = 100.0
    v_min: float = 1.0
    v_max: float = 5.0
    propagation: PropagationModel = PropagationModel()
    link: ScenarioAParams = ScenarioAParams()

    def __post_init__(self):
        if self.scenario not in ("A", "B"):
            raise SimConfigError(f"unknown scenario {self.scenario!r}")
        if not self.iterations > 0:
            raise SimConfigError("iterations must be > 0")
        if not 0 < self.v_min <= self.v_max:
            raise SimConfigError("need 0 < v_min <= v_max")
        if not self.coverage_radius > 0:
            raise SimConfigError("coverage_radius must be > 0")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def default_config(scenario: str, seed: int = 0) -> SimConfig:
    """Reference defaults: A runs 5k samples at 1 m/s, B 10k at 1-5 m/s."""
    scenario = scenario.upper()
    if scenario == "A":
        # the A station never leaves coverage, so it roams a small area around its AP
        return SimConfig("A", 5000, seed, arena=(40.0, 40.0), ap_position=(20.0, 20.0), v_min=1.0, v_max=1.0)
    if scenario == "B":
        return SimConfig("B", 10000, seed, v_min=1.0, v_max=5.0)
    raise SimConfigError(f"unknown scenario {scenario!r}")


def config_from_dict(d: Mapping[str, Any]) -> SimConfig:
    """Build a SimConfig from a parsed config file, starting from scenario defaults."""
    d = dict(d)
    base = default_config(str(d.get("scenario", "A")), int(d.get("seed", 0)))
    kw: dict[str, Any] = {}
    for key in ("iterations", "seed"):
        if key in d:
            kw[key] = int(d[key])
    for key in ("step_dt", "coverage_radius", "v_min", "v_max"):
        if key in d:
            kw[key] = float(d[key])
    for key in ("arena", "ap_position", "start_position"):
        if d.get(key) is not None:
            kw[key] = tuple(float(v) for v in d[key])
    if "propagation" in d:
        kw["propagation"] = PropagationModel(**{k: float(v) for k, v in d["propagation"].items()})
    if "link" in d:
        ld = dict(d["link"])
        lk: dict[str, Any] = {}
        if "baseline" in ld:
            lk["baseline"] = LinkState(**{k: float(v) for k, v in ld.pop("baseline").items()})
        if "synth" in ld:
            lk["synth"] = LinkSynthParams(**{k: float(v) for k, v in ld.pop("synth").items()})
        if "episodes" in ld:
            lk["episodes"] = tuple(Episode(int(e["onset"]), int(e["duration"]), str(e["kind"]))
                                   for e in ld.pop("episodes"))
        for key in ("gap_range", "duration_range"):
            if key in ld:
                lk[key] = tuple(int(v) for v in ld.pop(key))
        lk.update({k: float(v) for k, v in ld.items()})
        kw["link"] = dataclasses.replace(base.link, **lk)
    unknown = set(d) - {"scenario", "iterations", "seed", "step_dt", "coverage_radius", "v_min", "v_max",
                        "arena", "ap_position", "start_position", "propagation", "link"}
    if unknown:
        raise SimConfigError(f"unknown config keys {sorted(unknown)}")
    return dataclasses.replace(base, **kw)


# --------------------------------------------------------------------------
# radio + mobility


def rssi_at(prop: PropagationModel, ap_pos: Sequence[float], ue_pos: Sequence[float],
            rng: np.random.Generator | None = None) -> float:
    """Log-distance RSSI in dBm; distances below d0 are clamped to d0."""
    d = math.hypot(ue_pos[0] - ap_pos[0], ue_pos[1] - ap_pos[1])
    d = max(d, prop.d0)
    rssi = prop.tx_power - prop.pl_d0 - 10.0 * prop.exponent * math.log10(d / prop.d0)
    if prop.noise_sigma > 0 and rng is not None:
        rssi += rng.normal(0.0, prop.noise_sigma)
    return rssi


def _reflect(p: float, hi: float) -> float:
    while p < 0.0 or p > hi:
        p = -p if p < 0.0 else 2.0 * hi - p
    return p


def step_mobility(state: MobilityState, rng: np.random.Generator) -> MobilityState:
    """One random-walk step: fresh direction and speed, reflected at the walls."""
    while True:
        dx, dy = rng.uniform(-1.0, 1.0, size=2)
        norm = math.hypot(dx, dy)
        if norm > 1e-12:
            break
    v = rng.uniform(state.v_min, state.v_max) if state.v_max > state.v_min else state.v_min
    dist = v * state.step_dt
    x = state.position[0] + dist * dx / norm
    y = state.position[1] + dist * dy / norm
    pos = (_reflect(x, state.bounds[0]), _reflect(y, state.bounds[1]))
    return dataclasses.replace(state, position=pos, velocity=float(v), direction=(float(dx), float(dy)))


# --------------------------------------------------------------------------
# link metrics


def synth_link_metrics(link: LinkState, distance: float, rng: np.random.Generator | None = None,
                       params: LinkSynthParams = LinkSynthParams()) -> tuple[float, float]:
    """Return (throughput Mbit/s, RTT ms) for a TCP flow over ``link``.

    Throughput is the Mathis bound capped by the link bandwidth; RTT is twice
    the one-way delay plus a fixed base and a distance term. Jitter never
    pushes throughput above the cap or RTT below twice the link delay.
    """
    rtt = 2.0 * (link.delay + params.base_delay_ms + params.alpha_ms_per_m * max(distance, 0.0))
    if rng is not None and params.jitter > 0:
        rtt *= 1.0 + rng.uniform(-params.jitter, params.jitter)
    rtt = max(rtt, 2.0 * link.delay)
    p = max(link.loss, params.loss_floor)
    mathis_mbps = params.mathis_k * params.mss_bytes * 8.0 / ((rtt / 1000.0) * math.sqrt(p)) / 1e6
    tput = min(link.bandwidth, mathis_mbps)
    if rng is not None and params.jitter > 0:
        tput *= 1.0 - rng.uniform(0.0, params.jitter)
    return float(tput), float(rtt)


def label_scenario_a(link: LinkState) -> int:
    return DEGRADATIONS.index(link.active_degradation)


def label_scenario_b(prev_inside: bool, now_inside: bool) -> int:
    if prev_inside:
        return 0 if now_inside else 1
    return 3 if now_inside else 2


def validate_schedule(episodes: Sequence[Episode], iterations: int) -> None:
    last_end = 0
    for ep in sorted(episodes, key=lambda e: e.onset):
        if ep.kind not in DEGRADATIONS[1:]:
            raise SimConfigError(f"episode kind must be one of {DEGRADATIONS[1:]}, got {ep.kind!r}")
        if ep.onset < 0 or ep.duration < 1:
            raise SimConfigError(f"bad episode {ep}")
        if ep.onset < last_end:
            raise SimConfigError(f"overlapping degradation episodes at step {ep.onset}")
        last_end = ep.onset + ep.duration


def random_schedule(params: ScenarioAParams, iterations: int, rng: np.random.Generator) -> list[Episode]:
    """Alternate healthy gaps and single-kind degradation episodes."""
    out = []
    t = 0
    while True:
        t += int(rng.integers(params.gap_range[0], params.gap_range[1] + 1))
        if t >= iterations:
            break
        dur = int(rng.integers(params.duration_range[0], params.duration_range[1] + 1))
        kind = DEGRADATIONS[1 + int(rng.integers(0, 3))]
        out.append(Episode(t, min(dur, iterations - t), kind))
        t += dur
    return out


def _link_at(params: ScenarioAParams, kind: str) -> LinkState:
    b = params.baseline
    if kind == "bandwidth":
        return LinkState(params.degraded_bandwidth, b.delay, b.loss, kind)
    if kind == "loss":
        return LinkState(b.bandwidth, b.delay, params.degraded_loss, kind)
    if kind == "delay":
        return LinkState(b.bandwidth, params.degraded_delay, b.loss, kind)
    return b


# --------------------------------------------------------------------------
# runs


def _start_state(cfg: SimConfig) -> MobilityState:
    pos = cfg.start_position or cfg.ap_position
    return MobilityState(tuple(float(v) for v in pos), cfg.v_min, (0.0, 0.0), cfg.arena,
                         cfg.v_min, cfg.v_max, cfg.step_dt)


def run_scenario(cfg: SimConfig) -> Dataset:
    """Simulate ``cfg.iterations`` samples; sample 0 is the initial state."""
    rng_mob, rng_meas, rng_sched = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    n = cfg.iterations
    feats = np.empty((n, 4), dtype=float)
    labels = np.empty(n, dtype=np.int64)
    state = _start_state(cfg)

    if cfg.scenario == "A":
        lp = cfg.link
        episodes = list(lp.episodes) if lp.episodes else random_schedule(lp, n, rng_sched)
        validate_schedule(episodes, n)
        kind_at = ["none"] * n
        for ep in episodes:
            for t in range(ep.onset, min(ep.onset + ep.duration, n)):
                kind_at[t] = ep.kind
        bad = False
        for t in range(n):
            if t > 0:
                state = step_mobility(state, rng_mob)
            kind = kind_at[t]
            link = _link_at(lp, kind)
            if kind == "loss":
                if t == 0 or kind_at[t - 1] != "loss":
                    bad = True
                elif bad:
                    bad = rng_sched.random() >= lp.loss_p_bad_to_good
                else:
                    bad = rng_sched.random() < lp.loss_p_good_to_bad
                effective = link if bad else dataclasses.replace(link, loss=lp.baseline.loss)
            else:
                effective = link
            d = math.dist(state.position, cfg.ap_position)
            tput, rtt = synth_link_metrics(effective, d, rng_meas, lp.synth)
            feats[t] = (state.position[0], state.position[1], tput, rtt)
            labels[t] = label_scenario_a(link)
    else:
        prev_inside = math.dist(state.position, cfg.ap_position) <= cfg.coverage_radius
        for t in range(n):
            if t > 0:
                state = step_mobility(state, rng_mob)
            d = math.dist(state.position, cfg.ap_position)
            inside = d <= cfg.coverage_radius
            rssi = rssi_at(cfg.propagation, cfg.ap_position, state.position, rng_meas)
            feats[t] = (state.position[0], state.position[1], rssi, state.velocity)
            labels[t] = label_scenario_b(prev_inside, inside)
            prev_inside = inside

    return Dataset(cfg.scenario, SCHEMAS[cfg.scenario], np.arange(n, dtype=np.int64), feats, labels,
                   {"config_digest": cfg.digest(), "seed": cfg.seed})
