"""Deterministic discrete-event simulator for SLSP networks.

The medium is a broadcast over the ground-truth graph: every frame a node
emits is delivered, after a fixed latency, to all of its current graph
neighbors (which makes promiscuous overhearing exact). Nodes only ever see
encoded bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import networkx as nx

from . import wire
from .adversary import ADVERSARY_CLASSES, Adversary, AdversaryBehavior, CollusionChannel
from .crypto import CertificateAuthority, NodeIdentity, generate_keypair
from .engine import NodeConfig, SlspNode
from .lsdb import edge
from .topology import ball_edges

MAC_BASE = 0x02_00_00_00_00_00
IP_BASE = 0x0A_00_00_00

_TIMER, _DELIVER, _MOBILITY, _SAMPLE = 0, 1, 2, 3


class MobilityKind(str, Enum):
    STATIC = "Static"
    RANDOM_EDGE_CHURN = "RandomEdgeChurn"


@dataclass
class MobilityModel:
    kind: MobilityKind = MobilityKind.STATIC
    churn_rate: float = 0.0
    keep_connected: bool = True

    def __post_init__(self):
        self.kind = MobilityKind(self.kind)
        if self.churn_rate < 0:
            raise ValueError("churn_rate must be >= 0")


@dataclass
class Metrics:
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]
        lines.append(json.dumps(self.summary, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())


def _r(x: float) -> float:
    return round(float(x), 6)


class SimWorld:
    def __init__(
        self,
        graph: nx.Graph,
        config: Optional[NodeConfig] = None,
        seed: int = 0,
        latency: float = 0.001,
        loss: float = 0.0,
        node_configs: Optional[dict[int, NodeConfig]] = None,
        mobility: Optional[MobilityModel] = None,
        sample_interval: float = 1.0,
        check: bool = False,
        boot_spread: Optional[float] = None,
    ):
        if not 0.0 <= loss < 1.0:
            raise ValueError("loss must be in [0, 1)")
        if latency <= 0:
            raise ValueError("latency must be positive")
        self.graph = nx.Graph()
        self.graph.add_nodes_from(sorted(graph.nodes()))
        self.graph.add_edges_from(sorted(edge(a, b) for a, b in graph.edges()))
        self.seed = seed
        self.latency = latency
        self.loss = loss
        self.base_config = config or NodeConfig()
        self.node_configs = dict(node_configs or {})
        self.mobility = mobility or MobilityModel()
        self.sample_interval = sample_interval
        self.check = check

        self.clock = 0.0
        self._queue: list[tuple] = []
        self._counter = 0
        self._wake: dict[int, float] = {}
        self._started = False
        self._trace = hashlib.sha256()
        self.events_processed = 0

        self.rng = random.Random(f"slsp-world:{seed}")
        self._loss_rng = random.Random(f"slsp-loss:{seed}")
        self._mob_rng = random.Random(f"slsp-mobility:{seed}")
        self.authority = CertificateAuthority(random.Random(f"slsp-ca:{seed}"))

        self.edge_born: dict[tuple[int, int], float] = {e: -math.inf for e in self.graph.edges()}
        self.ever_edges: set[tuple[int, int]] = set(self.edge_born)
        self.channels: dict[frozenset, CollusionChannel] = {}

        self.nodes: dict[int, SlspNode] = {}
        self._ip_to_id: dict[int, int] = {}
        self._boot: dict[int, float] = {}
        spread = self.base_config.hello_period if boot_spread is None else boot_spread
        for nid in self.graph.nodes():
            if not isinstance(nid, int) or nid < 0 or nid >= 0xFFFF:
                raise ValueError(f"node ids must be ints in 0..65534, got {nid!r}")
            self._boot[nid] = self.rng.uniform(0.0, spread) if spread > 0 else 0.0
            self.nodes[nid] = self._make_node(nid, SlspNode)
            self._ip_to_id[self.ip_of(nid)] = nid

        # per-(originator ip, seq, key id) bookkeeping for reach measurements
        self.lsu_origin: dict[tuple, tuple[int, float]] = {}
        self.lsu_reach: dict[tuple, set[int]] = {}
        self.tx_count: Counter = Counter()
        self.tx_log: Optional[list[tuple[float, int]]] = None
        self.nlp_events: list[dict] = []
        self.violations: list[str] = []
        self.metrics = Metrics()

    # -- identities -------------------------------------------------------------------

    @staticmethod
    def ip_of(nid: int) -> int:
        return IP_BASE + nid + 1

    @staticmethod
    def mac_of(nid: int) -> int:
        return MAC_BASE + nid + 1

    def id_of_ip(self, ip: int) -> Optional[int]:
        return self._ip_to_id.get(ip)

    def config_of(self, nid: int) -> NodeConfig:
        return self.node_configs.get(nid, self.base_config)

    def _make_node(self, nid: int, cls: type, **params) -> SlspNode:
        config = self.config_of(nid)
        seed = config.rng_seed if config.rng_seed is not None else f"slsp-node:{self.seed}:{nid}"
        rng = random.Random(seed)
        kp = generate_keypair(rng)
        ip = self.ip_of(nid)
        identity = NodeIdentity(self.mac_of(nid), ip, kp, self.authority.issue(ip, kp.public_key))
        node = cls(identity, config, self.authority, rng, self._boot[nid], **params)
        node.accept_hook = self._on_accept
        return node

    def collusion_channel(self, a: int, b: int) -> CollusionChannel:
        return self.channels.setdefault(frozenset((a, b)), CollusionChannel())

    def inject_adversary(self, nid: int, behavior: AdversaryBehavior) -> Adversary:
        if nid not in self.nodes:
            raise KeyError(f"unknown node id {nid}")
        if self._started:
            raise RuntimeError("adversaries must be injected before the simulation starts")
        cls = ADVERSARY_CLASSES[behavior.kind]
        node = self._make_node(nid, cls, **behavior.params)
        self.nodes[nid] = node
        node.bind(self)
        return node

    def adversaries(self) -> set[int]:
        return {nid for nid, n in self.nodes.items() if n.adversarial}

    def benign(self) -> list[int]:
        return [nid for nid in sorted(self.nodes) if not self.nodes[nid].adversarial]

    # -- event queue ------------------------------------------------------------------------

    def _push(self, t: float, kind: int, a: Any = None, b: Any = None) -> None:
        self._counter += 1
        heapq.heappush(self._queue, (t, self._counter, kind, a, b))

    def _reschedule(self, nid: int) -> None:
        t = max(self.nodes[nid].next_wakeup(), self.clock)
        if t < self._wake.get(nid, math.inf):
            self._wake[nid] = t
            self._push(t, _TIMER, nid)

    def _start(self) -> None:
        self._started = True
        for nid in sorted(self.nodes):
            self._reschedule(nid)
        if self.mobility.kind is MobilityKind.RANDOM_EDGE_CHURN and self.mobility.churn_rate > 0:
            self._push(self._mob_rng.expovariate(self.mobility.churn_rate), _MOBILITY)
        if self.sample_interval > 0:
            self._push(self.sample_interval, _SAMPLE)

    def _transmit(self, sender: int, frames: list[bytes]) -> None:
        if not frames:
            return
        node = self.nodes[sender]
        if node.is_silenced(self.clock):
            self.violations.append(f"t={self.clock:.6f} node {sender} transmitted while silenced")
        receivers = sorted(self.graph.neighbors(sender))
        for data in frames:
            self.tx_count[sender] += 1
            if self.tx_log is not None:
                self.tx_log.append((self.clock, sender))
            self._note_origin(sender, data)
            if self.loss > 0:
                targets = tuple(r for r in receivers if self._loss_rng.random() >= self.loss)
            else:
                targets = tuple(receivers)
            if targets:
                self._push(self.clock + self.latency, _DELIVER, targets, data)

    def _note_origin(self, sender: int, data: bytes) -> None:
        try:
            frame = wire.decode_frame(data)
        except wire.MalformedPacket:
            return
        p = frame.payload
        if isinstance(p, wire.LsuPacket) and p.originator_ip == self.ip_of(sender):
            key = (p.originator_ip, p.seq, p.signature.signer_key_id)
            if key not in self.lsu_origin:
                self.lsu_origin[key] = (sender, self.clock)
                self.lsu_reach[key] = set()

    def _on_accept(self, node: SlspNode, packet, now: float) -> None:
        if isinstance(packet, wire.LsuPacket):
            key = (packet.originator_ip, packet.seq, packet.signature.signer_key_id)
            self.lsu_reach.setdefault(key, set()).add(self.id_of_ip(node.ip))

    def step(self) -> Optional[tuple]:
        """Process the earliest event; returns it, or None if the queue is empty."""
        if not self._started:
            self._start()
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        t, _, kind, a, b = event
        self.clock = t
        if kind == _TIMER:
            if self._wake.get(a) != t:
                return event
            self._wake[a] = math.inf
            self.events_processed += 1
            self._trace.update(f"T{t!r}:{a};".encode())
            out = self.nodes[a].timer_tick(t)
            self._transmit(a, out)
            self._reschedule(a)
        elif kind == _DELIVER:
            self.events_processed += 1
            self._trace.update(f"D{t!r}:{a}:".encode())
            self._trace.update(b)
            for nid in a:
                self._deliver(nid, b, t)
        elif kind == _MOBILITY:
            self._churn(t)
        elif kind == _SAMPLE:
            self.sample(t)
            self._push(t + self.sample_interval, _SAMPLE)
        return event

    def _deliver(self, nid: int, data: bytes, t: float) -> None:
        node = self.nodes[nid]
        if self.check:
            before = node.state_digest()
            n_notes = len(node.notification_log)
        out = node.deliver(data, t)
        if self.check and len(node.notification_log) > n_notes:
            after = node.state_digest()
            for when, note in node.notification_log[n_notes:]:
                self.nlp_events.append(
                    {
                        "t": when,
                        "node": nid,
                        "kind": note.kind.value,
                        "offending_mac": note.offending_mac,
                        "offending_ip": note.offending_ip,
                        "state_before": before,
                        "state_after": after,
                    }
                )
                if before != after:
                    self.violations.append(f"t={t:.6f} node {nid}: NLP-discarded packet changed state")
        self._transmit(nid, out)
        self._reschedule(nid)

    def _churn(self, t: float) -> None:
        nodes = sorted(self.graph.nodes())
        if len(nodes) >= 2:
            a, b = self._mob_rng.sample(nodes, 2)
            e = edge(a, b)
            if self.graph.has_edge(*e):
                self.graph.remove_edge(*e)
                if self.mobility.keep_connected and not nx.is_connected(self.graph):
                    self.graph.add_edge(*e)
                else:
                    self.edge_born.pop(e, None)
            else:
                self.graph.add_edge(*e)
                self.edge_born[e] = t
                self.ever_edges.add(e)
        self._push(t + self._mob_rng.expovariate(self.mobility.churn_rate), _MOBILITY)

    def run(self, duration: float) -> Metrics:
        """Process every event with time <= ``duration`` and return metrics."""
        if not self._started:
            self._start()
        while self._queue and self._queue[0][0] <= duration:
            self.step()
        self.clock = max(self.clock, duration)
        self.metrics.summary = self.summary()
        return self.metrics

    # -- measurement ----------------------------------------------------------------------------

    def confirmed_edges(self, nid: int) -> set[tuple[int, int]]:
        out = set()
        for a, b in self.nodes[nid].lsdb.confirmed:
            ia, ib = self.id_of_ip(a), self.id_of_ip(b)
            # addresses that map to no node (spoofed) are kept as negative ids
            ia = -a if ia is None else ia
            ib = -b if ib is None else ib
            out.add(edge(ia, ib))
        return out

    def topology_accuracy(self, nid: int, min_edge_age: float = 0.0) -> tuple[float, float]:
        """(precision, recall) of a node's confirmed links against the true
        edges inside its true R-ball. Links between two adversaries are left
        out of precision; see :meth:`collusion_links`."""
        radius = self.config_of(nid).radius
        truth = ball_edges(self.graph, nid, radius)
        adv = self.adversaries()
        confirmed = {e for e in self.confirmed_edges(nid) if not (e[0] in adv and e[1] in adv)}
        precision = len(confirmed & truth) / len(confirmed) if confirmed else 1.0
        if min_edge_age > 0:
            truth = {e for e in truth if self.clock - self.edge_born.get(e, -math.inf) >= min_edge_age}
        recall = len(confirmed & truth) / len(truth) if truth else 1.0
        return precision, recall

    def fabricated_links(self) -> set[tuple[int, int]]:
        """Links ever confirmed by a benign node that never existed."""
        out = set()
        for nid in self.benign():
            for a, b in self.nodes[nid].lsdb.ever_confirmed:
                ia, ib = self.id_of_ip(a), self.id_of_ip(b)
                ia = -a if ia is None else ia
                ib = -b if ib is None else ib
                e = edge(ia, ib)
                if e not in self.ever_edges:
                    out.add(e)
        return out

    def collusion_links(self) -> set[tuple[int, int]]:
        adv = self.adversaries()
        return {e for e in self.fabricated_links() if e[0] in adv and e[1] in adv}

    def lsu_service_completion(self) -> float:
        """Fraction of LSU frames from benign neighbors that benign nodes
        enqueued and actually served."""
        benign_macs = {self.mac_of(n) for n in self.benign()}
        enq = served = 0
        for nid in self.benign():
            st = self.nodes[nid].stats
            for (mac, kind), c in st.enqueued_by_mac.items():
                if kind == "LsuPacket" and mac in benign_macs:
                    enq += c
            for (mac, kind), c in st.served_by_mac.items():
                if kind == "LsuPacket" and mac in benign_macs:
                    served += c
        return served / enq if enq else 1.0

    def reach_histogram(self) -> dict[int, int]:
        hist: Counter = Counter(len(s) for s in self.lsu_reach.values())
        return dict(sorted(hist.items()))

    def sample(self, t: float) -> None:
        adv = self.adversaries()
        for nid in self.benign():
            node = self.nodes[nid]
            p, r = self.topology_accuracy(nid)
            self.metrics.records.append(
                {
                    "type": "node",
                    "t": _r(t),
                    "node": nid,
                    "precision": _r(p),
                    "recall": _r(r),
                    "confirmed_links": len(node.lsdb.confirmed),
                    "neighbors": len(node.nlp),
                    "keys": len(node.keystore),
                    "discards": dict(sorted(node.stats.discards.items())),
                    "backlog": node.sched.backlog(),
                }
            )
        if self.check:
            bad = [e for e in self.fabricated_links() if not (e[0] in adv and e[1] in adv)]
            if bad:
                self.violations.append(f"t={t:.6f} fabricated links with a benign endpoint: {sorted(bad)}")

    def summary(self) -> dict:
        benign = self.benign()
        adv = self.adversaries()
        precisions, recalls = [], []
        for nid in benign:
            p, r = self.topology_accuracy(nid)
            precisions.append(p)
            recalls.append(r)
        fabricated = self.fabricated_links()
        collusion = sorted(e for e in fabricated if e[0] in adv and e[1] in adv)
        discards: Counter = Counter()
        notes: Counter = Counter()
        malformed = 0
        for nid in benign:
            st = self.nodes[nid].stats
            discards.update(st.discards)
            notes.update(st.notifications)
            malformed += sum(st.malformed.values())
        return {
            "type": "summary",
            "seed": self.seed,
            "t": _r(self.clock),
            "nodes": len(self.nodes),
            "adversaries": sorted(adv),
            "precision": _r(sum(precisions) / len(precisions)) if precisions else 1.0,
            "min_precision": _r(min(precisions)) if precisions else 1.0,
            "recall": _r(sum(recalls) / len(recalls)) if recalls else 1.0,
            "min_recall": _r(min(recalls)) if recalls else 1.0,
            "fabricated_links": len(fabricated),
            "fabricated_links_with_benign_endpoint": len(fabricated) - len(collusion),
            "collusion_links": [list(e) for e in collusion],
            "discards": dict(sorted(discards.items())),
            "notifications": dict(sorted(notes.items())),
            "malformed": malformed,
            "rekeys": sum(len(self.nodes[n].retired_key_ids) for n in sorted(self.nodes)),
            "transmissions": sum(self.tx_count.values()),
            "lsu_reach_histogram": {str(k): v for k, v in self.reach_histogram().items()},
            "lsu_service_completion": _r(self.lsu_service_completion()),
            "violations": len(self.violations),
            "trace_digest": self._trace.hexdigest(),
        }

    def lsdb_snapshots(self) -> dict[int, bytes]:
        return {nid: self.nodes[nid].lsdb.snapshot() for nid in sorted(self.nodes)}
