"""Byzantine node behaviors.

Every adversary is a full SLSP node holding only its own key pair. It
deviates by overriding hooks of :class:`SlspNode` and by emitting extra
frames, always built through the wire codec or as raw bytes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Optional, Union

from . import wire
from .crypto import digest
from .engine import SlspNode
from .wire import LsuPacket, PkdPacket

if TYPE_CHECKING:
    from .sim import SimWorld


class AdversaryKind(str, Enum):
    LINK_FORGER = "LinkForger"
    IP_SPOOFER = "IpSpoofer"
    MAC_SPOOFER = "MacSpoofer"
    REPLAYER = "Replayer"
    FLOODER = "Flooder"
    HOP_EXTENDER = "HopExtender"
    DROPPER = "Dropper"
    COLLUDER_PAIR = "ColluderPair"


@dataclass
class AdversaryBehavior:
    kind: AdversaryKind
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = AdversaryKind(self.kind)


class Adversary(SlspNode):
    adversarial = True
    kind: AdversaryKind

    def __init__(self, *args, **params):
        super().__init__(*args)
        self.params = params
        self._pending: list[tuple[float, int, bytes]] = []
        self._pending_n = 0

    def bind(self, world: "SimWorld") -> None:
        """Resolve node-id parameters against the world."""

    # delayed emissions ---------------------------------------------------------

    def schedule(self, when: float, data: bytes) -> None:
        heapq.heappush(self._pending, (when, self._pending_n, data))
        self._pending_n += 1

    def next_wakeup(self) -> float:
        t = super().next_wakeup()
        if self._pending:
            t = min(t, self._pending[0][0])
        return t

    def timer_tick(self, now: float) -> list[bytes]:
        out = super().timer_tick(now)
        extra = []
        while self._pending and self._pending[0][0] <= now:
            extra.append(heapq.heappop(self._pending)[2])
        extra.extend(self.extra_frames(now))
        return out + extra

    def extra_frames(self, now: float) -> list[bytes]:
        return []

    def own_frame(self, packet) -> bytes:
        return self._frame(packet)


class LinkForger(Adversary):
    """Advertises links to nodes it is not adjacent to."""

    kind = AdversaryKind.LINK_FORGER

    def bind(self, world):
        self.fake_ips = [world.ip_of(t) for t in self.params.get("targets", [])]

    def advertised_links(self):
        return super().advertised_links() + self.fake_ips


class IpSpoofer(Adversary):
    """From ``start`` on, claims a different IP in every frame: either a
    fresh unused address (``mode='change'``) or a victim's (``mode='duplicate'``)."""

    kind = AdversaryKind.IP_SPOOFER

    def bind(self, world):
        self.start = float(self.params.get("start", 0.0))
        mode = self.params.get("mode", "duplicate")
        if mode == "duplicate":
            self.claimed_ip = world.ip_of(self.params["victim"])
        elif mode == "change":
            self.claimed_ip = int(self.params.get("new_ip", 0x0AFF0000 | (self.ip & 0xFFFF)))
        else:
            raise ValueError(f"unknown IpSpoofer mode {mode!r}")

    def frame_source(self):
        if self._now >= self.start:
            return self.mac, self.claimed_ip
        return self.mac, self.ip


class MacSpoofer(Adversary):
    """From ``start`` on, transmits with a victim's MAC address."""

    kind = AdversaryKind.MAC_SPOOFER

    def bind(self, world):
        self.start = float(self.params.get("start", 0.0))
        self.spoofed_mac = world.mac_of(self.params["victim"])

    def frame_source(self):
        if self._now >= self.start:
            return self.spoofed_mac, self.ip
        return self.mac, self.ip


class Replayer(Adversary):
    """Retransmits every LSU it overhears ``copies`` times, behaving
    normally otherwise. Copies are re-framed with the replayer's own
    addresses so they pass NLP screening and reach the engine."""

    kind = AdversaryKind.REPLAYER

    def bind(self, world):
        self.copies = int(self.params.get("copies", 5))
        self.delay = float(self.params.get("delay", 0.05))
        self.gap = float(self.params.get("gap", 0.05))
        self._replayed: set[tuple] = set()

    def deliver(self, data: bytes, now: float) -> list[bytes]:
        out = super().deliver(data, now)
        try:
            frame = wire.decode_frame(bytes(data))
        except wire.MalformedPacket:
            return out
        p = frame.payload
        if isinstance(p, LsuPacket):
            key = (p.originator_ip, p.seq, p.signature.signer_key_id)
            if key not in self._replayed:
                self._replayed.add(key)
                copy = self._frame(p)
                for k in range(self.copies):
                    self.schedule(now + self.delay + k * self.gap, copy)
        return out


class Flooder(Adversary):
    """Emits control packets at ``rate`` per second from ``start`` on.

    ``payload`` is ``pkd`` (its own validly signed key broadcast with a new
    sequence number each time), ``lsu`` (validly signed LSUs) or ``junk``
    (random undecodable bytes).
    """

    kind = AdversaryKind.FLOODER

    def bind(self, world):
        self.rate = float(self.params.get("rate", 100.0))
        self.start = float(self.params.get("start", 0.0))
        self.payload = self.params.get("payload", "pkd")
        if self.payload not in ("pkd", "lsu", "junk"):
            raise ValueError(f"unknown Flooder payload {self.payload!r}")
        self._next_flood = self.start
        self._flood_count = 0

    def next_wakeup(self) -> float:
        return min(super().next_wakeup(), self._next_flood)

    def extra_frames(self, now):
        out = []
        while self._next_flood <= now:
            self._flood_count += 1
            self._next_flood = self.start + self._flood_count / self.rate
            if self.payload == "junk":
                out.append(self.mac.to_bytes(6, "big") + self.ip.to_bytes(4, "big") + self.rng.randbytes(24))
                continue
            saved = self._last_key_broadcast
            packet = self.originate_pkd(now) if self.payload == "pkd" else self.originate_lsu(now)
            self._last_key_broadcast = saved
            if packet is not None:
                out.append(self._frame(packet))
        return out


Mutation = Callable[[Union[LsuPacket, PkdPacket]], Optional[Union[LsuPacket, PkdPacket]]]


def forward_unchanged(p):
    return p


def inflate_ttl(p):
    return replace(p, ttl=min(p.ttl + 1, 255))


def randomize_hops(p):
    return replace(p, ttl=max(p.ttl - 1, 0), hops_traversed=digest(b"forged" + p.hops_traversed))


def reset_ttl(p):
    radius = p.r_lsu if isinstance(p, LsuPacket) else p.r_pkd
    return replace(p, ttl=max(radius - 1, 0))


MUTATIONS: dict[str, Mutation] = {
    "unchanged": forward_unchanged,
    "inflate_ttl": inflate_ttl,
    "random_hops": randomize_hops,
    "reset_ttl": reset_ttl,
}


class HopExtender(Adversary):
    """Relays LSUs and PKDs with a tampered ttl/hops_traversed pair instead
    of the honest transformation. ``mode='unchanged'`` forwards the packet
    as received, even at ttl 0."""

    kind = AdversaryKind.HOP_EXTENDER

    def bind(self, world):
        mode = self.params.get("mode", "unchanged")
        self.mutation = mode if callable(mode) else MUTATIONS[mode]

    def relay_transform(self, packet):
        mutated = self.mutation(packet)
        return [] if mutated is None else [mutated]


class Dropper(Adversary):
    """Never relays anything; originates its own traffic normally."""

    kind = AdversaryKind.DROPPER

    def relay_transform(self, packet):
        return []


class CollusionChannel:
    """Out-of-band link between colluders."""

    def __init__(self):
        self.mailboxes: dict[int, list[bytes]] = {}

    def post(self, to_ip: int, data: bytes) -> None:
        self.mailboxes.setdefault(to_ip, []).append(data)

    def drain(self, ip: int) -> list[bytes]:
        return self.mailboxes.pop(ip, [])


class ColluderPair(Adversary):
    """Advertises a link to its partner; both sides do, so the fabricated
    link is two-sided. With ``tunnel=True`` each colluder also rebroadcasts
    the partner's own LSUs locally, unchanged."""

    kind = AdversaryKind.COLLUDER_PAIR

    def bind(self, world):
        partner = self.params["partner"]
        self.partner_ip = world.ip_of(partner)
        self.tunnel = bool(self.params.get("tunnel", False))
        self.channel = world.collusion_channel(world.id_of_ip(self.ip), partner)

    def advertised_links(self):
        return super().advertised_links() + [self.partner_ip]

    def originate_lsu(self, now):
        lsu = super().originate_lsu(now)
        if lsu is not None and self.tunnel:
            self.channel.post(self.partner_ip, wire.encode(lsu))
        return lsu

    def extra_frames(self, now):
        out = []
        for raw in self.channel.drain(self.ip):
            mac, ip = self.frame_source()
            out.append(mac.to_bytes(6, "big") + ip.to_bytes(4, "big") + raw)
        return out


ADVERSARY_CLASSES: dict[AdversaryKind, type[Adversary]] = {
    cls.kind: cls
    for cls in (LinkForger, IpSpoofer, MacSpoofer, Replayer, Flooder, HopExtender, Dropper, ColluderPair)
}
