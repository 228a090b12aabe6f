"""Sub-network topology graph, change events and UE/EVO re-association.

Snapshots are frozen values. Every applied change yields a new snapshot whose
version is one higher and whose event log carries the event, so the current
state can always be rebuilt by replaying the log over the version-0 snapshot.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import networkx as nx
import yaml

SCENARIOS = ("A", "B")
SUBNET_KINDS = ("autonomous", "parent-dependent")
EVO_ROLES = ("master", "distributor")
LINK_FIELDS = ("bandwidth", "delay", "loss")
# Scenario-B labels: 0 inside, 1 exit, 2 outside, 3 re-enter
INSIDE_AFTER_LABEL = {0: True, 1: False, 2: False, 3: True}

SPEC_FORMAT_VERSION = 1


class TopologyError(ValueError):
    """Invalid topology description or change event."""


@dataclass(frozen=True)
class AccessPoint:
    id: str
    position: tuple[float, float]
    channel: int = 1
    mode: str = "g"
    tx_power: float = 20.0
    coverage_radius: float = 100.0

    def __post_init__(self):
        if not self.coverage_radius > 0:
            raise TopologyError(f"access point {self.id}: coverage_radius must be > 0")


@dataclass(frozen=True)
class SubNetwork:
    id: str
    kind: str = "autonomous"
    access_point: AccessPoint | None = None
    ues: tuple[str, ...] = ()
    evos: tuple[str, ...] = ()
    parent: bool = False
    switches: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in SUBNET_KINDS:
            raise TopologyError(f"sub-network {self.id}: unknown kind {self.kind!r}")

    def node_ids(self) -> tuple[str, ...]:
        ap = (self.access_point.id,) if self.access_point else ()
        return (self.id, *ap, *self.switches)


@dataclass(frozen=True)
class Link:
    id: str
    endpoints: tuple[str, str]
    bandwidth: float
    delay: float = 0.0
    loss: float = 0.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise TopologyError(f"link {self.id}: bandwidth must be > 0")
        if not self.delay >= 0:
            raise TopologyError(f"link {self.id}: delay must be >= 0")
        if not 0.0 <= self.loss <= 1.0:
            raise TopologyError(f"link {self.id}: loss must lie in [0, 1]")


@dataclass(frozen=True)
class UE:
    id: str
    position: tuple[float, float] = (0.0, 0.0)
    velocity: float = 0.0
    inside: bool = True
    covered_by: str | None = None

    def __post_init__(self):
        if not self.velocity >= 0:
            raise TopologyError(f"UE {self.id}: velocity must be >= 0")


@dataclass(frozen=True)
class EVO:
    id: str
    role: str
    host: str

    def __post_init__(self):
        if self.role not in EVO_ROLES:
            raise TopologyError(f"EVO {self.id}: unknown role {self.role!r}")


@dataclass(frozen=True)
class Association:
    ue: str
    evo: str
    since_version: int = 0


@dataclass(frozen=True)
class Unreachable:
    """Re-association outcome when no EVO can serve the UE."""

    ue: str
    reason: str


@dataclass(frozen=True)
class ChangeEvent:
    scenario: str
    label: int
    subject: str
    detail: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise TopologyError(f"unknown scenario {self.scenario!r}")
        if self.label not in (0, 1, 2, 3):
            raise TopologyError(f"label must be in 0..3, got {self.label!r}")

    def to_dict(self) -> dict:
        detail = dict(self.detail)
        if isinstance(detail.get("association"), Association):
            a = detail["association"]
            detail["association"] = {"ue": a.ue, "evo": a.evo}
        return {"scenario": self.scenario, "label": self.label,
                "subject": self.subject, "detail": detail}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChangeEvent":
        return cls(d["scenario"], int(d["label"]), d["subject"], dict(d.get("detail") or {}))


@dataclass(frozen=True)
class ReassociationPolicy:
    scenario: str
    fallback_evo: str | None = None


@dataclass(frozen=True)
class TopologySnapshot:
    version: int = 0
    subnetworks: tuple[SubNetwork, ...] = ()
    links: tuple[Link, ...] = ()
    ues: tuple[UE, ...] = ()
    evos: tuple[EVO, ...] = ()
    associations: tuple[Association, ...] = ()
    event_log: tuple[ChangeEvent, ...] = ()

    def subnetwork(self, sid: str) -> SubNetwork:
        for s in self.subnetworks:
            if s.id == sid:
                return s
        raise TopologyError(f"unknown sub-network {sid!r}")

    def link(self, lid: str) -> Link:
        for l in self.links:
            if l.id == lid:
                return l
        raise TopologyError(f"unknown link {lid!r}")

    def ue(self, uid: str) -> UE:
        for u in self.ues:
            if u.id == uid:
                return u
        raise TopologyError(f"unknown UE {uid!r}")

    def evo(self, eid: str) -> EVO:
        for e in self.evos:
            if e.id == eid:
                return e
        raise TopologyError(f"unknown EVO {eid!r}")

    def association_of(self, uid: str) -> Association | None:
        for a in self.associations:
            if a.ue == uid:
                return a
        return None

    def home_of(self, uid: str) -> str | None:
        for s in self.subnetworks:
            if uid in s.ues:
                return s.id
        return None

    def parent(self) -> SubNetwork | None:
        return next((s for s in self.subnetworks if s.parent), None)

    def owner_map(self) -> dict[str, str]:
        """Map every graph node id (sub-network, AP, switch) to its sub-network."""
        out = {}
        for s in self.subnetworks:
            for nid in s.node_ids():
                out[nid] = s.id
        return out

    def to_dict(self) -> dict:
        return snapshot_to_dict(self)


# --------------------------------------------------------------------------
# construction


def _point(v) -> tuple[float, float]:
    x, y = v
    return (float(x), float(y))


def build_topology(spec: Mapping[str, Any] | None) -> TopologySnapshot:
    """Build a version-0 snapshot from a declarative description.

    ``spec`` has the top-level keys ``subnetworks``, ``links``, ``ues`` and
    ``evos`` (all optional) plus optional initial ``associations``.
    """
    spec = dict(spec or {})
    seen: set[str] = set()

    def claim(nid: str):
        if nid in seen:
            raise TopologyError(f"duplicate id {nid!r}")
        seen.add(nid)

    ues = []
    for u in spec.get("ues") or []:
        claim(u["id"])
        ues.append(UE(u["id"], _point(u.get("position", (0.0, 0.0))), float(u.get("velocity", 0.0))))
    evos_raw = list(spec.get("evos") or [])
    for e in evos_raw:
        claim(e["id"])

    subnets = []
    for s in spec.get("subnetworks") or []:
        claim(s["id"])
        ap = None
        if s.get("access_point"):
            a = s["access_point"]
            claim(a["id"])
            ap = AccessPoint(a["id"], _point(a.get("position", (0.0, 0.0))), int(a.get("channel", 1)),
                             str(a.get("mode", "g")), float(a.get("tx_power", 20.0)),
                             float(a.get("coverage_radius", 100.0)))
        for sw in s.get("switches") or []:
            claim(sw)
        subnets.append(SubNetwork(s["id"], s.get("kind", "autonomous"), ap, tuple(s.get("ues") or ()),
                                  tuple(s.get("evos") or ()), bool(s.get("parent", False)),
                                  tuple(s.get("switches") or ())))

    subnet_ids = {s.id for s in subnets}
    evos = []
    for e in evos_raw:
        host = e.get("host")
        if host is None:
            host = next((s.id for s in subnets if e["id"] in s.evos), None)
        if host not in subnet_ids:
            raise TopologyError(f"EVO {e['id']}: unknown host sub-network {host!r}")
        evos.append(EVO(e["id"], e.get("role", "master"), host))
    # keep SubNetwork.evos consistent with EVO.host
    subnets = [dataclasses.replace(s, evos=tuple(e.id for e in evos if e.host == s.id)) for s in subnets]

    ue_ids = {u.id for u in ues}
    for s in subnets:
        for uid in s.ues:
            if uid not in ue_ids:
                raise TopologyError(f"sub-network {s.id} lists unknown UE {uid!r}")
    homes = {}
    for s in subnets:
        for uid in s.ues:
            if uid in homes:
                raise TopologyError(f"UE {uid!r} belongs to two sub-networks")
            homes[uid] = s.id
    ues = [dataclasses.replace(u, covered_by=homes.get(u.id)) for u in ues]

    if sum(s.parent for s in subnets) > 1:
        raise TopologyError("at most one sub-network may be flagged parent")

    node_ids = set()
    for s in subnets:
        node_ids.update(s.node_ids())
    links = []
    for l in spec.get("links") or []:
        claim(l["id"])
        a, b = l["endpoints"]
        for end in (a, b):
            if end not in node_ids:
                raise TopologyError(f"link {l['id']}: dangling endpoint {end!r}")
        links.append(Link(l["id"], (a, b), float(l["bandwidth"]), float(l.get("delay", 0.0)),
                          float(l.get("loss", 0.0))))

    snap = TopologySnapshot(0, tuple(subnets), tuple(links), tuple(ues), tuple(evos))
    owners = snap.owner_map()
    for s in subnets:
        if s.kind == "parent-dependent":
            if not any(s.id in (owners[a], owners[b]) for a, b in (l.endpoints for l in links)):
                raise TopologyError(f"parent-dependent sub-network {s.id} has no backhaul link")

    assocs = []
    for a in spec.get("associations") or []:
        if a["ue"] not in ue_ids or a["evo"] not in {e.id for e in evos}:
            raise TopologyError(f"association {a} references unknown UE or EVO")
        if any(x.ue == a["ue"] for x in assocs):
            raise TopologyError(f"UE {a['ue']!r} has two associations")
        assocs.append(Association(a["ue"], a["evo"], 0))
    return dataclasses.replace(snap, associations=tuple(sorted(assocs, key=lambda a: a.ue)))


def load_topology(path: str | Path) -> TopologySnapshot:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    version = doc.get("format_version", SPEC_FORMAT_VERSION)
    if version != SPEC_FORMAT_VERSION:
        raise TopologyError(f"unsupported topology format_version {version!r}")
    return build_topology(doc)


def snapshot_to_dict(snap: TopologySnapshot) -> dict:
    def ap(a):
        return None if a is None else dataclasses.asdict(a)

    return {
        "version": snap.version,
        "subnetworks": [
            {"id": s.id, "kind": s.kind, "parent": s.parent, "access_point": ap(s.access_point),
             "ues": list(s.ues), "evos": list(s.evos), "switches": list(s.switches)}
            for s in snap.subnetworks
        ],
        "links": [dataclasses.asdict(l) for l in snap.links],
        "ues": [dataclasses.asdict(u) for u in snap.ues],
        "evos": [dataclasses.asdict(e) for e in snap.evos],
        "associations": [dataclasses.asdict(a) for a in snap.associations],
        "event_log": [e.to_dict() for e in snap.event_log],
    }


# --------------------------------------------------------------------------
# changes


def _replace_in(items: tuple, new) -> tuple:
    return tuple(new if x.id == new.id else x for x in items)


def apply_change(snap: TopologySnapshot, event: ChangeEvent) -> TopologySnapshot:
    """Return the next snapshot with ``event`` applied.

    Scenario-A events target a link and may set ``bandwidth``, ``delay`` and
    ``loss``. Scenario-B events target a UE; the label fixes the UE's coverage
    state and ``detail`` may name the covering sub-network (``covered_by``)
    and a new ``position``. Either kind may carry ``association``.
    """
    detail = dict(event.detail)
    version = snap.version + 1
    link_ids = {l.id for l in snap.links}
    ue_ids = {u.id for u in snap.ues}
    links, ues = snap.links, snap.ues

    if event.scenario == "A":
        if event.subject not in link_ids:
            kind = "UE" if event.subject in ue_ids else "unknown"
            raise TopologyError(f"scenario A event subject {event.subject!r} is not a link ({kind})")
        unknown = set(detail) - set(LINK_FIELDS) - {"association"}
        if unknown:
            raise TopologyError(f"unsupported link detail fields {sorted(unknown)}")
        changes = {k: float(detail[k]) for k in LINK_FIELDS if k in detail}
        if changes:
            links = _replace_in(links, dataclasses.replace(snap.link(event.subject), **changes))
    else:
        if event.subject not in ue_ids:
            kind = "link" if event.subject in link_ids else "unknown"
            raise TopologyError(f"scenario B event subject {event.subject!r} is not a UE ({kind})")
        unknown = set(detail) - {"covered_by", "position", "association"}
        if unknown:
            raise TopologyError(f"unsupported UE detail fields {sorted(unknown)}")
        ue = snap.ue(event.subject)
        inside = INSIDE_AFTER_LABEL[event.label]
        home = snap.home_of(ue.id)
        covered = detail.get("covered_by", home if inside else None)
        if covered is not None:
            snap.subnetwork(covered)
        changes = {"inside": inside, "covered_by": covered}
        if "position" in detail:
            changes["position"] = _point(detail["position"])
        ues = _replace_in(ues, dataclasses.replace(ue, **changes))

    assocs = snap.associations
    if "association" in detail:
        a = detail["association"]
        if a is not None:
            if isinstance(a, Association):
                a = {"ue": a.ue, "evo": a.evo}
            if a["ue"] not in ue_ids:
                raise TopologyError(f"association references unknown UE {a['ue']!r}")
            snap.evo(a["evo"])
            current = snap.association_of(a["ue"])
            if current is not None and current.evo == a["evo"]:
                new = current
            else:
                new = Association(a["ue"], a["evo"], version)
            assocs = tuple(sorted([x for x in assocs if x.ue != a["ue"]] + [new], key=lambda x: x.ue))
        event = dataclasses.replace(event, detail={**detail, "association": a})

    return dataclasses.replace(snap, version=version, links=links, ues=ues, associations=assocs,
                               event_log=snap.event_log + (event,))


def replay(initial: TopologySnapshot, events: Iterable[ChangeEvent]) -> TopologySnapshot:
    snap = initial
    for ev in events:
        snap = apply_change(snap, ev)
    return snap


# --------------------------------------------------------------------------
# re-association


def _subnet_graph(snap: TopologySnapshot) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(s.id for s in snap.subnetworks)
    owners = snap.owner_map()
    for l in snap.links:
        a, b = owners[l.endpoints[0]], owners[l.endpoints[1]]
        if a != b:
            g.add_edge(a, b, key=l.id, link=l)
    return g


def path_score(links: Iterable[Link]) -> tuple[float, float, float]:
    """Sort key for a path: lower is better.

    Ordered by end-to-end loss, then total delay, then bottleneck bandwidth
    (descending).
    """
    keep, delay, bw = 1.0, 0.0, math.inf
    for l in links:
        keep *= 1.0 - l.loss
        delay += l.delay
        bw = min(bw, l.bandwidth)
    return (1.0 - keep, delay, -bw)


def best_path_score(snap: TopologySnapshot, src: str, dst: str,
                    graph: nx.MultiGraph | None = None) -> tuple[float, float, float] | None:
    if src == dst:
        return path_score(())
    g = graph if graph is not None else _subnet_graph(snap)
    if src not in g or dst not in g or not nx.has_path(g, src, dst):
        return None
    best = None
    for epath in nx.all_simple_edge_paths(g, src, dst):
        score = path_score(g.edges[e]["link"] for e in epath)
        if best is None or score < best:
            best = score
    return best


def _pick(candidates: list[EVO], current: Association | None) -> EVO:
    if current is not None:
        for e in candidates:
            if e.id == current.evo:
                return e
    masters = [e for e in candidates if e.role == "master"]
    return (masters or candidates)[0]


def reassociate(snap: TopologySnapshot, ue_id: str,
                policy: ReassociationPolicy) -> Association | Unreachable:
    """Choose the EVO that should serve ``ue_id`` under ``policy``.

    Returns the current association unchanged when it is still (one of) the
    best choices, so repeated calls on the same snapshot agree.
    """
    ue = snap.ue(ue_id)
    current = snap.association_of(ue_id)

    if policy.scenario == "A":
        origin = ue.covered_by or snap.home_of(ue_id)
        if origin is None:
            return Unreachable(ue_id, "UE is not attached to any sub-network")
        g = _subnet_graph(snap)
        scored = []
        for e in snap.evos:
            s = best_path_score(snap, origin, e.host, g)
            if s is not None:
                scored.append((s, e))
        if not scored:
            return _fallback(snap, ue_id, policy, current, "no EVO reachable from sub-network")
        top = min(s for s, _ in scored)
        chosen = _pick([e for s, e in scored if s == top], current)
    elif policy.scenario == "B":
        if ue.covered_by is None:
            return _fallback(snap, ue_id, policy, current, "UE outside all coverage")
        local = [e for e in snap.evos if e.host == ue.covered_by]
        if not local:
            return _fallback(snap, ue_id, policy, current, f"no EVO in sub-network {ue.covered_by}")
        chosen = _pick(local, current)
    else:
        raise TopologyError(f"unknown scenario {policy.scenario!r}")

    if current is not None and current.evo == chosen.id:
        return current
    return Association(ue_id, chosen.id, snap.version)


def _fallback(snap, ue_id, policy, current, reason):
    if policy.fallback_evo is None:
        return Unreachable(ue_id, reason)
    snap.evo(policy.fallback_evo)
    if current is not None and current.evo == policy.fallback_evo:
        return current
    return Association(ue_id, policy.fallback_evo, snap.version)
