import math
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient
from hypothesis import given, settings, strategies as st

from conftest import Scripted
from topomgmt import pipeline as P, service as S, sim, topology as T

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
AP1, RADIUS = (100.0, 100.0), 100.0


def inside(x, y):
    return math.dist((x, y), AP1) <= RADIUS


def b_oracle(f):
    # two-sample window: previous and current (x, y, rssi, velocity)
    return sim.label_scenario_b(inside(f[0], f[1]), inside(f[4], f[5]))


def a_rule(f):
    if f[2] <= 0.1:
        return 1
    if f[3] >= 200.0:
        return 3
    return 0


def top_of(*fns, n_features):
    return P.TopN(tuple((Scripted(fn, n_features), P.EvalReport(f"m{i}", 0.9 - i / 100, 0.1, None, None,
                                                                 ((0,) * 4,) * 4))
                        for i, fn in enumerate(fns)))


def b_service(**kw):
    ms = P.ModelSet("B", (2, 1), top_of(b_oracle, b_oracle, lambda f: 0, n_features=8), {})
    return S.TopologyService(T.load_topology(CONFIGS / "topology_b.yaml"), {"B": ms}, **kw)


def a_service(**kw):
    ms = P.ModelSet("A", (1, 0), top_of(a_rule, lambda f: 1 if f[2] <= 0.1 else 0, lambda f: 2, n_features=4), {})
    return S.TopologyService(T.load_topology(CONFIGS / "topology_a.yaml"), {"A": ms}, **kw)


def b_sample(x, y=100.0, v=1.0):
    rssi = sim.rssi_at(sim.PropagationModel(), AP1, (x, y))
    return {"x": x, "y": y, "rssi": rssi, "velocity": v}


# inside, inside, exit, stay outside, re-enter
SCRIPT = [100.0, 190.0, 210.0, 215.0, 150.0]


# ---- ingest


def test_valid_sample_accepted():
    ack = b_service().ingest(b_sample(100))
    assert ack.accepted and ack.token.startswith("s-")


def test_sample_without_features_rejected():
    ack = b_service().ingest({"ue": "ue1"})
    assert not ack.accepted and "unrecognized" in ack.reason


def test_unknown_ue_rejected():
    assert not b_service().ingest({**b_sample(100), "ue": "ghost"}).accepted


def test_burst_processed_in_arrival_order():
    svc = b_service()
    xs = [100.0 + 0.2 * i for i in range(1000)]
    acks = svc.ingest_many(b_sample(x) for x in xs)
    assert all(a.accepted for a in acks)
    tokens = [a.token for a in acks]
    assert tokens == sorted(tokens) and len(set(tokens)) == 1000
    stats = svc.process()
    assert stats.processed == 1000
    # the walk leaves coverage at x = 200, so the first exit is on the sample after it
    first_exit = next(i for i, x in enumerate(xs) if not inside(x, 100.0))
    n = stats.notifications[0]
    assert n.label == 1 and n.sample_token == tokens[first_exit]
    assert [m.label for m in stats.notifications[1:]] == [2] * (len(stats.notifications) - 1)


# ---- processing


def test_label_zero_does_nothing():
    svc = b_service()
    svc.ingest_many([b_sample(100), b_sample(120), b_sample(150)])
    stats = svc.process()
    assert stats.notifications == [] and svc.get_topology().version == 0
    assert stats.warming == 1 and stats.no_change == 2


def test_exit_reassociates_to_reachable_evo():
    svc = b_service()
    svc.ingest_many([b_sample(190), b_sample(210)])
    (n,) = svc.process().notifications
    assert n.label == 1 and n.association == {"ue": "ue1", "evo": "m-evo-b"}
    snap = svc.get_topology()
    assert snap.association_of("ue1").evo == "m-evo-b" and n.version == snap.version == 1
    assert snap.ue("ue1").covered_by == "sn2"


def test_scenario_a_votes_match_direct_vote():
    svc = a_service()
    sample = {"x": 20, "y": 20, "throughput": 0.08, "rtt": 3.0}
    svc.ingest(sample)
    (n,) = svc.process().notifications
    _, x = P.select_scenario(sample)
    direct = P.vote_detail(svc._models["A"].top, x)
    assert n.label == direct.label == 1 and n.votes == direct
    assert [v["label"] for v in n.to_dict()["votes"]] == [1, 1, 2]
    link = svc.get_topology().link(n.subject)
    assert link.bandwidth == 0.1 and n.subject == "l1"


def test_scenario_a_degraded_backhaul_moves_ue():
    svc = a_service()
    svc.ingest({"x": 20, "y": 20, "throughput": 50, "rtt": 250.0})
    (n,) = svc.process().notifications
    assert n.label == 3 and n.association["evo"] == "m-evo-b"


def test_unchanged_samples_dropped():
    svc = b_service()
    svc.ingest_many([b_sample(100), b_sample(100)])
    assert svc.process().unchanged == 1


def test_not_ready_without_models():
    svc = S.TopologyService(T.load_topology(CONFIGS / "topology_b.yaml"))
    assert not svc.ready
    svc.ingest(b_sample(100))
    with pytest.raises(S.NotReady):
        svc.process()


# ---- subscriptions


def run_script(svc):
    svc.ingest_many(b_sample(x) for x in SCRIPT)
    return svc.process().notifications


def test_script_produces_three_changes():
    svc = b_service()
    notes = run_script(svc)
    assert [n.label for n in notes] == [1, 2, 3]
    assert [n.version for n in notes] == [1, 2, 3]
    assert [n.association["evo"] for n in notes] == ["m-evo-b", "m-evo-b", "d-evo-1"]


def test_filters_deliver_exactly_matching():
    delivered = []
    svc = b_service(deliver=lambda url, body: delivered.append((url, body["label"], body["event_id"])))
    subs = {lab: svc.subscribe({"labels": [lab]}, callback=f"http://cb/{lab}") for lab in (1, 2, 3)}
    every = svc.subscribe({"scenarios": ["B"]}, callback="http://cb/all")
    none_a = svc.subscribe({"scenario": "A"}, callback="http://cb/a")
    notes = run_script(svc)
    for lab, sub in subs.items():
        got = svc.get_notifications(0, sub.id)
        assert [n.label for n in got] == [lab]
        assert [d for d in delivered if d[0] == f"http://cb/{lab}"] == [(f"http://cb/{lab}", lab, got[0].event_id)]
    assert len(svc.get_notifications(0, every.id)) == 3
    assert svc.get_notifications(0, none_a.id) == []
    assert len(delivered) == 6
    assert len({d[2] for d in delivered}) == len(notes)


def test_disjoint_filters_one_change():
    svc = b_service()
    a = svc.subscribe({"labels": [1]})
    b = svc.subscribe({"labels": [3]})
    svc.ingest_many([b_sample(190), b_sample(210)])
    svc.process()
    assert len(svc.get_notifications(0, a.id)) == 1 and svc.get_notifications(0, b.id) == []


def test_notifications_cursor():
    svc = b_service()
    notes = run_script(svc)
    latest = notes[-1].version
    assert svc.get_notifications(latest) == []
    assert svc.get_notifications(1) == notes[1:]
    assert svc.get_notifications(1) == svc.get_notifications(1)


@pytest.mark.parametrize("flt", [{"labels": [7]}, {"scenarios": ["C"]}, {"colour": "red"}, {"labels": ["x"]}])
def test_malformed_filter(flt):
    with pytest.raises(S.BadRequest):
        b_service().subscribe(flt)


def test_unknown_subscription():
    svc = b_service()
    with pytest.raises(S.UnknownSubscription):
        svc.get_notifications(0, "sub-99")
    with pytest.raises(S.UnknownSubscription):
        svc.unsubscribe("sub-99")


def test_failed_callback_does_not_break_processing():
    def boom(url, body):
        raise ConnectionError("down")

    svc = b_service(deliver=boom)
    svc.subscribe(callback="http://nowhere")
    assert len(run_script(svc)) == 3


# ---- invariants


@settings(max_examples=30)
@given(st.lists(st.floats(0.0, 400.0), min_size=1, max_size=40))
def test_versions_unique_increasing_and_replay(xs):
    svc = b_service()
    svc.ingest_many(b_sample(x) for x in xs)
    notes = svc.process().notifications
    versions = [n.version for n in notes]
    assert versions == sorted(set(versions))
    for n in notes:
        assert n.event_id == f"evt-{n.version:08d}"
    assert T.replay(svc.initial_snapshot, svc.get_topology().event_log) == svc.get_topology()


@settings(max_examples=30)
@given(st.lists(st.floats(0.0, 200.0), min_size=1, max_size=30))
def test_vote_zero_never_changes_version(xs):
    # every sample is within coverage of the home AP
    svc = b_service()
    svc.ingest_many(b_sample(100 + (x - 100) * 0.99) for x in xs)
    svc.process()
    assert svc.get_topology().version == 0


def test_replay_from_log_file(tmp_path):
    log = tmp_path / "n.jsonl"
    svc = b_service(notification_log=log)
    run_script(svc)
    svc.ingest_many(b_sample(x) for x in (150.0, 250.0, 260.0, 100.0))
    svc.process()
    events = S.read_notification_log(log)
    assert len(events) == svc.get_topology().version
    assert T.replay(svc.initial_snapshot, events) == svc.get_topology()


# ---- HTTP


@pytest.fixture
def client():
    return TestClient(S.create_app(b_service()))


def test_http_round_trip_under_one_second(client):
    client.post("/v1/monitoring/samples", json=b_sample(190))
    t0 = time.perf_counter()
    r = client.post("/v1/monitoring/samples", json=b_sample(210))
    elapsed = time.perf_counter() - t0
    assert r.status_code == 200 and elapsed < 1.0
    (n,) = r.json()["notifications"]
    assert n["label"] == 1 and n["association"]["evo"] == "m-evo-b"


def test_http_subscription_and_long_poll(client):
    r = client.post("/v1/subscriptions", json={"filter": {"labels": [3]}})
    assert r.status_code == 201
    sid = r.json()["id"]
    client.post("/v1/monitoring/samples", json={"samples": [b_sample(x) for x in SCRIPT]})
    got = client.get("/v1/notifications", params={"subscription": sid}).json()
    assert [n["label"] for n in got["notifications"]] == [3]
    assert client.get("/v1/notifications", params={"since": got["next_since"]}).json()["notifications"] == []
    assert client.get("/v1/notifications", params={"subscription": "sub-x"}).status_code == 404
    assert client.post("/v1/subscriptions", json={"filter": {"labels": [9]}}).status_code == 400


def test_http_topology_and_rejection(client):
    r = client.post("/v1/monitoring/samples", json=[{"foo": 1}])
    assert r.json()["results"][0]["accepted"] is False
    topo = client.get("/v1/topology").json()
    assert topo["version"] == 0 and topo["associations"][0]["evo"] == "d-evo-1"
    assert client.post("/v1/monitoring/samples", json="nope").status_code == 400


def test_http_not_ready():
    c = TestClient(S.create_app(S.TopologyService(T.load_topology(CONFIGS / "topology_b.yaml"))))
    assert c.get("/v1/models").json()["ready"] is False
    assert c.post("/v1/monitoring/samples", json=b_sample(100)).status_code == 503
    assert c.post("/v1/admin/reload-models").status_code == 503


def test_http_reload_models(tmp_path):
    ds = sim.run_scenario(sim.SimConfig("B", 2500, 1, arena=(120.0, 120.0), ap_position=(60.0, 60.0),
                                        coverage_radius=40.0))
    res = P.run_pipeline(ds, "B", 2, kinds=("gbt", "forest"), grid=False, timing_reps=5)
    P.save_model_set(res, tmp_path / "mb")
    svc = S.TopologyService(T.load_topology(CONFIGS / "topology_b.yaml"), model_dirs={"B": tmp_path / "mb"})
    c = TestClient(S.create_app(svc))
    info = c.get("/v1/models").json()
    assert info["ready"] and [m["id"] for m in info["scenarios"]["B"]["models"]] == \
        [r.model_id for r in res.top.reports]
    assert all(len(m["sha256"]) == 64 for m in info["scenarios"]["B"]["models"])
    assert c.post("/v1/admin/reload-models").status_code == 200


def test_service_config_resolves_relative_paths(tmp_path):
    cfg = S.load_service_config(CONFIGS / "service.yaml")
    assert cfg.topology == CONFIGS / "topology_b.yaml"
    assert cfg.model_dirs["B"].name == "models_b"
    bad = tmp_path / "s.yaml"
    bad.write_text("models: {}\n")
    with pytest.raises(S.ServiceError):
        S.load_service_config(bad)
    assert cfg.port == 8080
