"""Topology API service: ingest monitoring samples, vote, apply changes, notify.

All topology mutation happens inside :meth:`TopologyService.process`, under
one lock, in arrival order. Readers get immutable snapshots.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from . import pipeline as P
from . import topology as T

log = logging.getLogger(__name__)

# link parameters written on the UE's backhaul for each Scenario-A label
A_PRESETS = {1: {"bandwidth": 0.1}, 2: {"loss": 0.6}, 3: {"delay": 100.0}}


class ServiceError(Exception):
    pass


class NotReady(ServiceError):
    pass


class UnknownSubscription(ServiceError):
    pass


class BadRequest(ServiceError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class Subscription:
    id: str
    scenarios: frozenset[str] | None = None
    labels: frozenset[int] | None = None
    callback: str | None = None
    created_at: str = ""

    def matches(self, n: "ChangeNotification") -> bool:
        return ((self.scenarios is None or n.scenario in self.scenarios)
                and (self.labels is None or n.label in self.labels))

    def to_dict(self) -> dict:
        return {"id": self.id, "filter": {"scenarios": None if self.scenarios is None else sorted(self.scenarios),
                                          "labels": None if self.labels is None else sorted(self.labels)},
                "callback": self.callback, "created_at": self.created_at}


@dataclass(frozen=True)
class ChangeNotification:
    event_id: str
    scenario: str
    label: int
    votes: P.VoteDetail
    subject: str
    ue: str
    association: dict | None
    version: int
    event: T.ChangeEvent
    sample_token: str
    created_at: str = ""

    def to_dict(self) -> dict:
        return {"event_id": self.event_id, "scenario": self.scenario, "label": self.label,
                "votes": self.votes.to_dict()["votes"], "subject": self.subject, "ue": self.ue,
                "association": self.association, "version": self.version, "event": self.event.to_dict(),
                "sample_token": self.sample_token, "created_at": self.created_at}


@dataclass(frozen=True)
class Ack:
    accepted: bool
    token: str | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "token": self.token, "reason": self.reason}


@dataclass
class _Queued:
    token: str
    ue: str
    scenario: str
    features: np.ndarray
    link: str | None


@dataclass
class ProcessStats:
    processed: int = 0
    unchanged: int = 0
    warming: int = 0
    no_change: int = 0
    notifications: list[ChangeNotification] = field(default_factory=list)


def parse_filter(d: Mapping[str, Any] | None) -> tuple[frozenset[str] | None, frozenset[int] | None]:
    d = dict(d or {})
    unknown = set(d) - {"scenarios", "scenario", "labels"}
    if unknown:
        raise BadRequest(f"unknown filter keys {sorted(unknown)}")
    sc = d.get("scenarios", d.get("scenario"))
    labels = d.get("labels")
    scenarios = None
    if sc is not None:
        sc = [sc] if isinstance(sc, str) else list(sc)
        scenarios = frozenset(str(s).upper() for s in sc)
        if not scenarios <= set(T.SCENARIOS):
            raise BadRequest(f"filter scenarios must be within {T.SCENARIOS}")
    lab = None
    if labels is not None:
        try:
            lab = frozenset(int(v) for v in labels)
        except (TypeError, ValueError):
            raise BadRequest("filter labels must be integers") from None
        if not lab <= {0, 1, 2, 3}:
            raise BadRequest("filter labels must lie in {0,1,2,3}")
    return scenarios, lab


class TopologyService:
    def __init__(self, snapshot: T.TopologySnapshot, model_sets: Mapping[str, P.ModelSet] | None = None,
                 fallback_evo: str | None = None, notification_log: str | Path | None = None,
                 model_dirs: Mapping[str, str | Path] | None = None,
                 deliver: Callable[[str, dict], None] | None = None):
        self._lock = threading.RLock()
        self._initial = snapshot
        self._snap = snapshot
        self._fallback = fallback_evo
        self._model_dirs = {k.upper(): Path(v) for k, v in (model_dirs or {}).items()}
        self._models: dict[str, P.ModelSet] = {}
        self._queue: deque[_Queued] = deque()
        self._seq = 0
        self._history: dict[tuple[str, str], deque] = {}
        self._selector = P.ScenarioSelector()
        self._notifications: list[ChangeNotification] = []
        self._subs: dict[str, Subscription] = {}
        self._sub_seq = 0
        self._log_path = Path(notification_log) if notification_log else None
        self._deliver = deliver or _post_callback
        self._baseline = {l.id: l for l in snapshot.links}
        if model_sets:
            self._models = {k.upper(): v for k, v in model_sets.items()}
        elif self._model_dirs:
            self.reload_models()

    # ---- models

    @property
    def ready(self) -> bool:
        return bool(self._models)

    def reload_models(self) -> dict:
        if not self._model_dirs:
            raise NotReady("no model directories configured")
        loaded = {}
        for sc, d in self._model_dirs.items():
            ms = P.load_model_set(d)
            if ms.scenario != sc:
                raise ServiceError(f"{d} holds scenario {ms.scenario} models, configured for {sc}")
            loaded[sc] = ms
        with self._lock:
            self._models = loaded
            self._history.clear()
        return self.models_info()

    def models_info(self) -> dict:
        with self._lock:
            return {sc: {"window": list(ms.window),
                         "models": [{"id": r.model_id, "kind": r.kind, "rank": i, "sha256": ms.digests.get(r.model_id)}
                                    for i, r in enumerate(ms.top.reports, start=1)]}
                    for sc, ms in sorted(self._models.items())}

    # ---- ingest

    def _default_ue(self, snap: T.TopologySnapshot) -> str:
        if len(snap.ues) == 1:
            return snap.ues[0].id
        raise BadRequest("sample must name its UE ('ue') when the topology has several")

    def ingest(self, sample: Mapping[str, Any]) -> Ack:
        if not isinstance(sample, Mapping):
            return Ack(False, reason="sample must be a JSON object")
        try:
            sc, x = P.select_scenario(sample)
            with self._lock:
                ue = str(sample.get("ue") or self._default_ue(self._snap))
                self._snap.ue(ue)
                link = sample.get("link")
                if link is not None:
                    self._snap.link(str(link))
                self._seq += 1
                token = f"s-{self._seq:08d}"
                self._queue.append(_Queued(token, ue, sc, x, None if link is None else str(link)))
        except (P.SelectionError, BadRequest, T.TopologyError) as exc:
            return Ack(False, reason=str(exc))
        return Ack(True, token)

    def ingest_many(self, samples: Iterable[Mapping[str, Any]]) -> list[Ack]:
        return [self.ingest(s) for s in samples]

    # ---- processing

    def process(self) -> ProcessStats:
        """Drain the queue in arrival order; returns what happened."""
        stats = ProcessStats()
        with self._lock:
            while self._queue:
                if self._queue[0].scenario not in self._models:
                    raise NotReady(f"no models loaded for scenario {self._queue[0].scenario}")
                item = self._queue.popleft()
                stats.processed += 1
                n = self._process_one(item, stats)
                if n is not None:
                    stats.notifications.append(n)
        for n in stats.notifications:
            self._fan_out(n)
        return stats

    def _process_one(self, item: _Queued, stats: ProcessStats) -> ChangeNotification | None:
        sample = dict(zip((c for c, _ in P.D.SCHEMAS[item.scenario]), item.features.tolist()))
        if self._selector.select(sample, source=item.ue) is None:
            stats.unchanged += 1
            return None
        ms = self._models[item.scenario]
        w = ms.window[0]
        hist = self._history.setdefault((item.ue, item.scenario), deque(maxlen=w))
        hist.append(item.features)
        feats = P.window_features(hist, w)
        if feats is None:
            stats.warming += 1
            return None
        detail = P.vote_detail(ms.top, feats)
        if detail.label == 0:
            stats.no_change += 1
            return None
        event = self._build_event(item, detail.label)
        # decide the association on the post-change topology, then apply once with it embedded
        trial = T.apply_change(self._snap, event)
        outcome = T.reassociate(trial, item.ue, T.ReassociationPolicy(item.scenario, self._fallback))
        if isinstance(outcome, T.Association):
            event = dataclasses.replace(event, detail={**event.detail,
                                                       "association": {"ue": outcome.ue, "evo": outcome.evo}})
            assoc = {"ue": outcome.ue, "evo": outcome.evo}
        else:
            assoc = {"ue": outcome.ue, "evo": None, "unreachable": outcome.reason}
        self._snap = T.apply_change(self._snap, event)
        v = self._snap.version
        notif = ChangeNotification(f"evt-{v:08d}", item.scenario, detail.label, detail, event.subject, item.ue,
                                   assoc, v, self._snap.event_log[-1], item.token, _now())
        self._notifications.append(notif)
        if self._log_path is not None:
            with open(self._log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(notif.to_dict(), sort_keys=True) + "\n")
        return notif

    def _build_event(self, item: _Queued, label: int) -> T.ChangeEvent:
        snap = self._snap
        if item.scenario == "A":
            link_id = item.link or self._backhaul_of(item.ue)
            base = self._baseline[link_id]
            detail = {"bandwidth": base.bandwidth, "delay": base.delay, "loss": base.loss, **A_PRESETS[label]}
            return T.ChangeEvent("A", label, link_id, detail)
        pos = (float(item.features[0]), float(item.features[1]))
        home = snap.home_of(item.ue)
        if label == 3:
            covered = home
        else:
            covered = next((s.id for s in snap.subnetworks
                            if s.id != home and s.access_point is not None
                            and math.dist(pos, s.access_point.position) <= s.access_point.coverage_radius), None)
        return T.ChangeEvent("B", label, item.ue, {"covered_by": covered, "position": list(pos)})

    def _backhaul_of(self, ue: str) -> str:
        snap = self._snap
        home = snap.home_of(ue)
        if home is None:
            raise ServiceError(f"UE {ue} has no home sub-network")
        owners = snap.owner_map()
        parent = snap.parent()
        touching = [l for l in snap.links if home in (owners[l.endpoints[0]], owners[l.endpoints[1]])
                    and owners[l.endpoints[0]] != owners[l.endpoints[1]]]
        if parent is not None:
            up = [l for l in touching if parent.id in (owners[l.endpoints[0]], owners[l.endpoints[1]])]
            touching = up or touching
        if not touching:
            raise ServiceError(f"sub-network {home} has no backhaul link")
        return touching[0].id

    # ---- subscriptions and reads

    def subscribe(self, filter: Mapping[str, Any] | None = None, callback: str | None = None) -> Subscription:
        scenarios, labels = parse_filter(filter)
        with self._lock:
            self._sub_seq += 1
            sub = Subscription(f"sub-{self._sub_seq}", scenarios, labels, callback, _now())
            self._subs[sub.id] = sub
        return sub

    def unsubscribe(self, sub_id: str) -> None:
        with self._lock:
            if self._subs.pop(sub_id, None) is None:
                raise UnknownSubscription(sub_id)

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            return list(self._subs.values())

    def get_notifications(self, since: int = 0, subscription: str | None = None) -> list[ChangeNotification]:
        """Notifications with version > ``since``, optionally through one subscription's filter."""
        with self._lock:
            sub = None
            if subscription is not None:
                sub = self._subs.get(subscription)
                if sub is None:
                    raise UnknownSubscription(subscription)
            return [n for n in self._notifications if n.version > since and (sub is None or sub.matches(n))]

    def get_topology(self) -> T.TopologySnapshot:
        with self._lock:
            return self._snap

    @property
    def initial_snapshot(self) -> T.TopologySnapshot:
        return self._initial

    def _fan_out(self, n: ChangeNotification) -> None:
        for sub in self.subscriptions():
            if sub.callback and sub.matches(n):
                try:
                    self._deliver(sub.callback, n.to_dict())
                except Exception as exc:  # delivery is best effort; long-poll still has it
                    log.warning("callback %s failed: %s", sub.callback, exc)


def _post_callback(url: str, body: dict) -> None:
    import httpx

    httpx.post(url, json=body, timeout=2.0)


def read_notification_log(path: str | Path) -> list[T.ChangeEvent]:
    events = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            events.append(T.ChangeEvent.from_dict(json.loads(line)["event"]))
    return events


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ServiceConfig:
    topology: Path
    model_dirs: dict[str, Path]
    fallback_evo: str | None = None
    notification_log: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080


def load_service_config(path: str | Path) -> ServiceConfig:
    import yaml

    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict) or "topology" not in doc:
        raise ServiceError(f"{path}: service config needs a 'topology' entry")
    unknown = set(doc) - {"topology", "models", "fallback_evo", "notification_log", "host", "port"}
    if unknown:
        raise ServiceError(f"{path}: unknown service config keys {sorted(unknown)}")

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else path.parent / p

    models = {str(k).upper(): rel(v) for k, v in (doc.get("models") or {}).items()}
    log_path = doc.get("notification_log")
    return ServiceConfig(rel(doc["topology"]), models, doc.get("fallback_evo"),
                         None if log_path is None else rel(log_path), str(doc.get("host", "127.0.0.1")),
                         int(doc.get("port", 8080)))


def service_from_config(cfg: ServiceConfig) -> TopologyService:
    snap = T.load_topology(cfg.topology)
    return TopologyService(snap, fallback_evo=cfg.fallback_evo, notification_log=cfg.notification_log,
                           model_dirs=cfg.model_dirs)


# --------------------------------------------------------------------------
# HTTP surface


def create_app(service: TopologyService):
    from fastapi import Body, FastAPI, HTTPException, Query

    app = FastAPI(title="topology API", version="1")

    @app.post("/v1/monitoring/samples")
    def post_samples(body: Any = Body(...), process: bool = Query(True)):
        samples = body.get("samples") if isinstance(body, dict) and "samples" in body else body
        if isinstance(samples, dict):
            samples = [samples]
        if not isinstance(samples, list):
            raise HTTPException(400, "body must be a sample object, a list, or {'samples': [...]}")
        acks = service.ingest_many(samples)
        out: dict[str, Any] = {"results": [a.to_dict() for a in acks]}
        if process and any(a.accepted for a in acks):
            try:
                stats = service.process()
            except NotReady as exc:
                raise HTTPException(503, f"not ready: {exc}") from None
            out["notifications"] = [n.to_dict() for n in stats.notifications]
        return out

    @app.get("/v1/topology")
    def get_topology():
        return service.get_topology().to_dict()

    @app.post("/v1/subscriptions", status_code=201)
    def post_subscription(body: dict = Body(default={})):
        try:
            sub = service.subscribe(body.get("filter"), body.get("callback"))
        except BadRequest as exc:
            raise HTTPException(400, str(exc)) from None
        return sub.to_dict()

    @app.get("/v1/notifications")
    def get_notifications(since: int = 0, subscription: str | None = None):
        try:
            items = service.get_notifications(since, subscription)
        except UnknownSubscription as exc:
            raise HTTPException(404, f"unknown subscription {exc}") from None
        latest = items[-1].version if items else since
        return {"notifications": [n.to_dict() for n in items], "next_since": latest}

    @app.get("/v1/models")
    def get_models():
        return {"ready": service.ready, "scenarios": service.models_info()}

    @app.post("/v1/admin/reload-models")
    def reload_models():
        try:
            return {"ready": True, "scenarios": service.reload_models()}
        except (NotReady, ServiceError, P.PipelineError, ValueError) as exc:
            raise HTTPException(503, f"reload failed: {exc}") from None

    return app
