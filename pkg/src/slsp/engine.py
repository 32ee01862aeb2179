"""The SLSP node: hello/LSU/PKD origination and validation, the hash-chain
relay gate, key store, sequence space, rekeying and timers.

A node never touches the network itself. ``deliver`` and ``timer_tick``
return the encoded frames to broadcast, and ``next_wakeup`` tells the caller
when the node wants its next tick.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Union

from . import wire
from .crypto import (
    Certificate,
    CertificateAuthority,
    NodeIdentity,
    PublicKey,
    generate_keypair,
    make_chain,
    sign,
    verify,
    verify_certificate,
    verify_chain_link,
)
from .lsdb import IngestResult, LinkStateDatabase
from .nlp import NeighborTable, NlpNotification, verify_hello
from .sched import Scheduler
from .wire import AttachedKey, Frame, HelloPacket, LsuPacket, PkdPacket, signable_bytes

SEQ_LIMIT = 1 << 32


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class PkdMode(str, Enum):
    STANDALONE = "StandalonePkd"
    LSU_ATTACHED = "LsuAttached"


@dataclass
class NodeConfig:
    """Per-node protocol parameters. Timeouts left as ``None`` derive from
    ``lsu_period``."""

    radius: int = 2
    lsu_period: float = 2.0
    hello_period: float = 1.0
    confirm_ls: Optional[float] = None
    lsu_flush: Optional[float] = None
    lost_neighbor: Optional[float] = None
    pkd_mode: PkdMode = PkdMode.STANDALONE
    extended_pkd_radius: Optional[int] = None
    rng_seed: Optional[int] = None
    key_capacity: int = 1024
    rebroadcast_threshold: float = 0.30
    max_key_interval: Optional[float] = None
    rate_half_life: float = 5.0
    rate_bands: tuple[float, ...] = (16.0, 32.0, 64.0)
    quanta: tuple[int, ...] = (8, 4, 2, 1)
    queue_cap: int = 64
    starvation_timeout: Optional[float] = None
    round_interval: float = 0.1
    maintenance_interval: float = 0.5
    dup_cache_age: Optional[float] = None

    def __post_init__(self):
        self.pkd_mode = PkdMode(self.pkd_mode)
        self.rate_bands = tuple(float(b) for b in self.rate_bands)
        self.quanta = tuple(int(q) for q in self.quanta)
        p = self.lsu_period
        if self.confirm_ls is None:
            self.confirm_ls = 2 * p
        if self.lsu_flush is None:
            self.lsu_flush = 3 * p
        if self.lost_neighbor is None:
            self.lost_neighbor = 4 * p
        if self.max_key_interval is None:
            self.max_key_interval = 10 * p
        if self.starvation_timeout is None:
            self.starvation_timeout = 4 * p
        if self.dup_cache_age is None:
            self.dup_cache_age = self.lsu_flush
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.radius <= 255:
            raise ConfigError("radius", "must be in 1..255")
        for name in ("lsu_period", "hello_period", "confirm_ls", "lsu_flush", "lost_neighbor",
                     "max_key_interval", "rate_half_life", "starvation_timeout", "round_interval",
                     "maintenance_interval", "dup_cache_age"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if self.lost_neighbor <= self.confirm_ls:
            raise ConfigError("lost_neighbor", f"must exceed confirm_ls ({self.lost_neighbor} <= {self.confirm_ls})")
        if self.lost_neighbor <= self.lsu_flush:
            raise ConfigError("lost_neighbor", f"must exceed lsu_flush ({self.lost_neighbor} <= {self.lsu_flush})")
        if self.extended_pkd_radius is not None and not self.radius <= self.extended_pkd_radius <= 255:
            raise ConfigError("extended_pkd_radius", "must be in radius..255")
        if not 0 < self.rebroadcast_threshold <= 1:
            raise ConfigError("rebroadcast_threshold", "must be in (0, 1]")
        if self.key_capacity < 1:
            raise ConfigError("key_capacity", "must be >= 1")
        if self.queue_cap < 1:
            raise ConfigError("queue_cap", "must be >= 1")
        if len(self.quanta) != len(self.rate_bands) + 1:
            raise ConfigError("quanta", "need one more quantum than rate band boundaries")
        if any(b >= a for a, b in zip(self.quanta, self.quanta[1:])) or self.quanta[-1] < 1:
            raise ConfigError("quanta", "must be positive and strictly decreasing")
        if any(b <= a for a, b in zip(self.rate_bands, self.rate_bands[1:])) or (
            self.rate_bands and self.rate_bands[0] <= 0
        ):
            raise ConfigError("rate_bands", "must be positive and strictly increasing")


# -- key store / sequence space / duplicate cache ---------------------------------


@dataclass
class KeyEntry:
    ip: int
    public_key: PublicKey
    serial: int
    highest_seq: int


class KeyStore:
    """Bounded FIFO of known keys, at most one per IP."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._entries: OrderedDict[int, KeyEntry] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, ip: int) -> bool:
        return ip in self._entries

    def get(self, ip: int) -> Optional[KeyEntry]:
        return self._entries.get(ip)

    def insert(self, ip: int, public_key: PublicKey, serial: int, seq: int) -> list[KeyEntry]:
        """Insert or replace; replacement moves the entry to the FIFO tail.
        Returns the entries evicted to make room."""
        self._entries.pop(ip, None)
        evicted = []
        while len(self._entries) >= self.capacity:
            evicted.append(self._entries.popitem(last=False)[1])
        self._entries[ip] = KeyEntry(ip, public_key, serial, seq)
        return evicted

    def entries(self) -> list[KeyEntry]:
        return list(self._entries.values())

    def key_ids(self) -> set[bytes]:
        return {e.public_key.key_id for e in self._entries.values()}

    def state_bytes(self) -> bytes:
        return b"".join(
            e.ip.to_bytes(4, "big") + e.public_key.key_id + e.serial.to_bytes(4, "big")
            for e in self._entries.values()
        )


class SequenceExhausted(Exception):
    pass


class SeqState:
    """One 32-bit counter shared by LSU and PKD emissions."""

    def __init__(self, next_seq: int = 0):
        self.next_seq = next_seq

    @property
    def exhausted(self) -> bool:
        return self.next_seq >= SEQ_LIMIT

    def take(self) -> int:
        if self.exhausted:
            raise SequenceExhausted
        seq = self.next_seq
        self.next_seq += 1
        return seq


class DuplicateCache:
    def __init__(self, max_age: float):
        self.max_age = max_age
        self._seen: dict[tuple, float] = {}

    def __contains__(self, key: tuple) -> bool:
        return key in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def add(self, key: tuple, now: float) -> None:
        self._seen[key] = now

    def purge(self, now: float) -> None:
        cutoff = now - self.max_age
        for key in [k for k, t in self._seen.items() if t < cutoff]:
            del self._seen[key]


# -- decisions / policies ------------------------------------------------------------


class Action(str, Enum):
    ACCEPT_RELAY = "Accept+Relay"
    ACCEPT_ONLY = "AcceptOnly"
    DISCARD = "Discard"


@dataclass(frozen=True)
class Decision:
    action: Action
    reason: Optional[str] = None
    relays: tuple = ()

    @property
    def accepted(self) -> bool:
        return self.action is not Action.DISCARD


def _discard(reason: str) -> Decision:
    return Decision(Action.DISCARD, reason)


ValidatePolicy = Callable[["SlspNode", PkdPacket, float], bool]
PeriodPolicy = Callable[["SlspNode", float], float]


def always_validate(node: "SlspNode", pkd: PkdPacket, now: float) -> bool:
    return True


def validate_within_hops(hops: int) -> ValidatePolicy:
    """Validate a key broadcast only if its originator is known to be within
    ``hops`` confirmed hops."""

    def policy(node: "SlspNode", pkd: PkdPacket, now: float) -> bool:
        d = node.lsdb.distances(node.ip).get(pkd.originator_ip)
        return d is not None and d <= hops

    return policy


def fixed_period(node: "SlspNode", now: float) -> float:
    return node.config.lsu_period


AnyPacket = Union[HelloPacket, LsuPacket, PkdPacket]


@dataclass
class NodeStats:
    discards: Counter = field(default_factory=Counter)
    accepted: Counter = field(default_factory=Counter)
    notifications: Counter = field(default_factory=Counter)
    malformed: Counter = field(default_factory=Counter)
    relayed: int = 0
    originated: Counter = field(default_factory=Counter)
    transmitted: int = 0
    suppressed: int = 0
    enqueued_by_mac: Counter = field(default_factory=Counter)
    served_by_mac: Counter = field(default_factory=Counter)
    keys_evicted: int = 0
    pkd_validation_skipped: int = 0


class SlspNode:
    """A benign SLSP participant. Adversarial behaviors subclass it and
    override the ``advertised_links``/``relay_transform``/``finalize_output``
    hooks."""

    adversarial = False

    def __init__(
        self,
        identity: NodeIdentity,
        config: NodeConfig,
        authority: CertificateAuthority,
        rng: random.Random,
        boot_time: float = 0.0,
        validate_policy: ValidatePolicy = always_validate,
        period_policy: PeriodPolicy = fixed_period,
    ):
        self.identity = identity
        self.config = config
        self.authority = authority
        self.authority_key = authority.public_key
        self.rng = rng
        self.validate_policy = validate_policy
        self.period_policy = period_policy

        self.nlp = NeighborTable(identity.mac, config.lost_neighbor, config.rate_half_life)
        self.keystore = KeyStore(config.key_capacity)
        self.lsdb = LinkStateDatabase(config.confirm_ls, config.lsu_flush)
        self.sched = Scheduler(
            self.nlp.rate_of,
            config.rate_bands,
            config.quanta,
            config.queue_cap,
            config.starvation_timeout,
        )
        self.seq = SeqState()
        self.dup = DuplicateCache(config.dup_cache_age)
        self.stats = NodeStats()
        self.notification_log: list[tuple[float, NlpNotification]] = []
        self.accept_hook: Optional[Callable[["SlspNode", AnyPacket, float], None]] = None

        self.booted = False
        self.next_hello = boot_time
        self.next_lsu = boot_time + rng.uniform(0.0, config.lsu_period)
        self.next_maint = boot_time + config.maintenance_interval
        self.round_due: Optional[float] = None
        self.silence_until: Optional[float] = None
        self.retired_key_ids: list[bytes] = []
        self.rekey_log: list[tuple[float, float]] = []  # (silence start, silence end)
        self._last_key_broadcast: Optional[float] = None
        self._neighbors_at_broadcast: frozenset[int] = frozenset()
        self._now = 0.0

    # -- identity ------------------------------------------------------------------

    @property
    def ip(self) -> int:
        return self.identity.ip

    @property
    def mac(self) -> int:
        return self.identity.mac

    def frame_source(self) -> tuple[int, int]:
        """(src_mac, src_ip) written into outgoing frames."""
        return self.identity.mac, self.identity.ip

    def _frame(self, packet: AnyPacket) -> bytes:
        mac, ip = self.frame_source()
        return wire.encode_frame(Frame(mac, ip, packet))

    def is_silenced(self, now: float) -> bool:
        return self.silence_until is not None and now < self.silence_until

    # -- inputs --------------------------------------------------------------------

    def deliver(self, data: bytes, now: float) -> list[bytes]:
        """Entry point for raw bytes from the medium."""
        self._now = now
        try:
            frame = wire.decode_frame(bytes(data))
        except wire.MalformedPacket as exc:
            mac = int.from_bytes(data[:6], "big") if len(data) >= 6 else None
            self.stats.malformed[(mac, exc.reason)] += 1
            return []
        return self.deliver_frame(frame, now)

    def deliver_frame(self, frame: Frame, now: float) -> list[bytes]:
        """NLP screening at arrival, then queueing for the scheduler."""
        self._now = now
        note = self.nlp.observe_frame(frame, now)
        if note is not None:
            self.on_nlp_notification(note, now)
            return []
        self.sched.enqueue(frame.src_mac, frame, now)
        self.stats.enqueued_by_mac[(frame.src_mac, type(frame.payload).__name__)] += 1
        if self.round_due is None:
            self.round_due = self._next_slot(now)
        return []

    def on_nlp_notification(self, note: NlpNotification, now: float) -> None:
        self.stats.notifications[note.kind.value] += 1
        self.notification_log.append((now, note))

    def _next_slot(self, now: float) -> float:
        t = self.config.round_interval
        return (int(now / t + 1e-9) + 1) * t

    def next_wakeup(self) -> float:
        t = min(self.next_hello, self.next_lsu, self.next_maint)
        if self.round_due is not None:
            t = min(t, self.round_due)
        if self.silence_until is not None:
            t = min(t, self.silence_until)
        return t

    def timer_tick(self, now: float) -> list[bytes]:
        self._now = now
        out: list[bytes] = []
        if self.silence_until is not None and now >= self.silence_until:
            self._finish_rekey(now, out)
        if now >= self.next_maint:
            self.maintenance(now)
            while self.next_maint <= now:
                self.next_maint += self.config.maintenance_interval
        if self.round_due is not None and now >= self.round_due:
            for frame in self.sched.run_round(now):
                out.extend(self.process(frame, now))
            self.round_due = self._next_slot(now) if self.sched.backlog() else None
        if now >= self.next_hello:
            if not self.booted:
                self.booted = True
                if self.config.pkd_mode is PkdMode.STANDALONE:
                    self._maybe_pkd(now, out)
            out.append(self._frame(self.make_hello()))
            self.stats.originated["hello"] += 1
            while self.next_hello <= now:
                self.next_hello += self.config.hello_period
        if now >= self.next_lsu:
            if self.config.pkd_mode is PkdMode.STANDALONE:
                self._maybe_pkd(now, out)
            lsu = self.originate_lsu(now)
            if lsu is not None:
                out.append(self._frame(lsu))
            while self.next_lsu <= now:
                self.next_lsu += self.period_policy(self, now)
        return self.finalize_output(out, now)

    def finalize_output(self, out: list[bytes], now: float) -> list[bytes]:
        if self.is_silenced(now):
            self.stats.suppressed += len(out)
            return []
        self.stats.transmitted += len(out)
        return out

    def maintenance(self, now: float) -> None:
        self.nlp.expire_lost(now)
        self.lsdb.expire_unconfirmed(now)
        self.lsdb.flush_stale(now)
        self.lsdb.prune_out_of_zone(self.ip, self.config.radius, now)
        self.sched.drop_starved(now)
        self.dup.purge(now)

    # -- origination ------------------------------------------------------------------

    def make_hello(self) -> HelloPacket:
        mac, ip = self.frame_source()
        hello = HelloPacket(mac, ip)
        return replace(hello, signature=sign(self.identity.keypair.private_key, signable_bytes(hello)))

    def advertised_links(self) -> list[int]:
        return [ip for ip in self.nlp.verified_ips() if ip != self.ip]

    def _take_seq(self, now: float) -> Optional[int]:
        try:
            return self.seq.take()
        except SequenceExhausted:
            self.rekey(now)
            return None

    def originate_lsu(self, now: float) -> Optional[LsuPacket]:
        """Build, sign and self-ingest the next LSU. Returns None when the
        sequence space is exhausted (a rekey starts instead) or while silent."""
        if self.is_silenced(now):
            return None
        seq = self._take_seq(now)
        if seq is None:
            return None
        r = self.config.radius
        chain = make_chain(self.rng.randbytes(32), r)
        links = tuple(sorted(set(self.advertised_links()) - {self.ip}))
        attached = None
        if self.config.pkd_mode is PkdMode.LSU_ATTACHED and self.key_rebroadcast_trigger(now):
            attached = AttachedKey(self.identity.keypair.public_key, self.identity.certificate)
            self._note_key_broadcast(now)
        lsu = LsuPacket(self.ip, seq, r, r - 1, chain.anchor, chain.first_link, links, attached)
        lsu = replace(lsu, signature=sign(self.identity.keypair.private_key, signable_bytes(lsu)))
        self.lsdb.ingest_report(self.ip, seq, links, now)
        self.dup.add(self._dup_key(lsu), now)
        self.stats.originated["lsu"] += 1
        return lsu

    def _maybe_pkd(self, now: float, out: list[bytes]) -> None:
        if self.key_rebroadcast_trigger(now):
            pkd = self.originate_pkd(now)
            if pkd is not None:
                out.append(self._frame(pkd))

    def originate_pkd(self, now: float) -> Optional[PkdPacket]:
        if self.is_silenced(now):
            return None
        periodic = (
            self._last_key_broadcast is not None
            and now - self._last_key_broadcast >= self.config.max_key_interval
        )
        seq = self._take_seq(now)
        if seq is None:
            return None
        r = self.config.radius
        if periodic and self.config.extended_pkd_radius is not None:
            r = self.config.extended_pkd_radius
        chain = make_chain(self.rng.randbytes(32), r)
        kp = self.identity.keypair
        pkd = PkdPacket(self.ip, seq, kp.public_key, self.identity.certificate, r, r - 1,
                        chain.anchor, chain.first_link)
        pkd = replace(pkd, signature=sign(kp.private_key, signable_bytes(pkd)))
        self.dup.add(self._dup_key(pkd), now)
        self._note_key_broadcast(now)
        self.stats.originated["pkd"] += 1
        return pkd

    def key_rebroadcast_trigger(self, now: float) -> bool:
        if self._last_key_broadcast is None:
            return True
        if now - self._last_key_broadcast >= self.config.max_key_interval:
            return True
        base = self._neighbors_at_broadcast
        if base:
            departed = len(base - set(self.nlp.verified_ips()))
            if departed / len(base) >= self.config.rebroadcast_threshold:
                return True
        return False

    def _note_key_broadcast(self, now: float) -> None:
        self._last_key_broadcast = now
        self._neighbors_at_broadcast = frozenset(self.nlp.verified_ips())

    # -- rekey ----------------------------------------------------------------------------

    def rekey(self, now: float) -> None:
        """Sequence space exhausted: go silent for the lost-neighbor timeout,
        then come back with a fresh key pair."""
        if self.silence_until is None:
            self.silence_until = now + self.config.lost_neighbor
            self.rekey_log.append((now, self.silence_until))

    def _finish_rekey(self, now: float, out: list[bytes]) -> None:
        self.silence_until = None
        self.retired_key_ids.append(self.identity.keypair.key_id)
        kp = generate_keypair(self.rng)
        cert = self.authority.issue(self.ip, kp.public_key)
        self.identity = replace(self.identity, keypair=kp, certificate=cert)
        self.seq = SeqState()
        self._last_key_broadcast = None
        self.lsdb.forget_originator(self.ip, now)
        if self.config.pkd_mode is PkdMode.STANDALONE:
            self._maybe_pkd(now, out)
        else:
            self.next_lsu = now
        self.next_hello = now

    # -- processing --------------------------------------------------------------------------

    def _dup_key(self, packet: Union[LsuPacket, PkdPacket]) -> tuple:
        tag = wire.TAG_LSU if isinstance(packet, LsuPacket) else wire.TAG_PKD
        return (tag, packet.originator_ip, packet.seq, packet.signature.signer_key_id)

    def process(self, frame: Frame, now: float) -> list[bytes]:
        """Engine stage for a frame the scheduler has released."""
        payload = frame.payload
        self.stats.served_by_mac[(frame.src_mac, type(payload).__name__)] += 1
        if isinstance(payload, HelloPacket):
            decision = self._process_hello(frame, now)
        elif isinstance(payload, LsuPacket):
            decision = self._process_lsu(frame, now)
        else:
            decision = self._process_pkd(frame, now)
        if decision.action is Action.DISCARD:
            self.stats.discards[decision.reason] += 1
            return []
        self.stats.accepted[type(payload).__name__] += 1
        if self.accept_hook is not None and not isinstance(payload, HelloPacket):
            self.accept_hook(self, payload, now)
        self.stats.relayed += len(decision.relays)
        return [self._frame(p) for p in decision.relays]

    def receive(self, frame: Frame, now: float) -> Decision:
        """Full single-frame pipeline without the scheduler in between:
        NLP screening, then the engine checks. Counters are updated as in
        normal operation."""
        self._now = now
        note = self.nlp.observe_frame(frame, now)
        if note is not None:
            self.on_nlp_notification(note, now)
            self.stats.discards["nlp"] += 1
            return _discard("nlp")
        payload = frame.payload
        if isinstance(payload, HelloPacket):
            decision = self._process_hello(frame, now)
        elif isinstance(payload, LsuPacket):
            decision = self._process_lsu(frame, now)
        else:
            decision = self._process_pkd(frame, now)
        if decision.action is Action.DISCARD:
            self.stats.discards[decision.reason] += 1
        else:
            self.stats.accepted[type(payload).__name__] += 1
            self.stats.relayed += len(decision.relays)
            if self.accept_hook is not None and not isinstance(payload, HelloPacket):
                self.accept_hook(self, payload, now)
        return decision

    receive_lsu = receive
    receive_pkd = receive

    def _process_hello(self, frame: Frame, now: float) -> Decision:
        hello = frame.payload
        if hello.mac != frame.src_mac or hello.ip != frame.src_ip:
            return _discard("hello_mismatch")
        if not verify_hello(hello, self.keystore):
            return _discard("unverified_hello")
        if frame.src_mac in self.nlp:
            self.nlp.mark_verified(frame.src_mac)
        return Decision(Action.ACCEPT_ONLY)

    def _certificate_ok(self, cert: Certificate, ip: int, public_key: PublicKey) -> bool:
        return (
            cert.subject_ip == ip
            and cert.subject_public_key == public_key
            and verify_certificate(cert, self.authority_key)
        )

    @staticmethod
    def _chain_ok(radius: int, ttl: int, zone: bytes, hops: bytes) -> bool:
        i = radius - ttl
        return 1 <= i <= radius and verify_chain_link(zone, hops, radius - i)

    def _finish_accept(self, packet: Union[LsuPacket, PkdPacket]) -> Decision:
        relays = tuple(self.relay_transform(packet))
        return Decision(Action.ACCEPT_RELAY if relays else Action.ACCEPT_ONLY, None, relays)

    def relay_transform(self, packet: Union[LsuPacket, PkdPacket]) -> list:
        if packet.ttl == 0:
            return []
        return [wire.relayed(packet)]

    def _process_lsu(self, frame: Frame, now: float) -> Decision:
        p: LsuPacket = frame.payload
        if p.originator_ip == self.ip:
            return _discard("own")
        entry = self.keystore.get(p.originator_ip)
        new_key: Optional[AttachedKey] = None
        if p.attached_key is not None:
            ak = p.attached_key
            if entry is not None and entry.public_key == ak.public_key:
                public_key = entry.public_key
            elif self._certificate_ok(ak.certificate, p.originator_ip, ak.public_key) and (
                entry is None or ak.certificate.serial > entry.serial
            ):
                public_key, new_key = ak.public_key, ak
            elif entry is not None:
                public_key = entry.public_key
            else:
                return _discard("bad_cert")
        elif entry is not None:
            public_key = entry.public_key
        else:
            return _discard("no_key")
        if not verify(public_key, signable_bytes(p), p.signature):
            return _discard("bad_sig")
        key = self._dup_key(p)
        if key in self.dup:
            return _discard("duplicate")
        if not self._chain_ok(p.r_lsu, p.ttl, p.zone_radius, p.hops_traversed):
            return _discard("bad_chain")
        self.dup.add(key, now)
        if new_key is not None:
            self._store_key(p.originator_ip, new_key.public_key, new_key.certificate.serial, p.seq, now)
        if self.lsdb.ingest_report(p.originator_ip, p.seq, p.links, now) is IngestResult.DUPLICATE:
            return _discard("duplicate")
        return self._finish_accept(p)

    def _process_pkd(self, frame: Frame, now: float) -> Decision:
        p: PkdPacket = frame.payload
        if p.originator_ip == self.ip:
            return _discard("own")
        entry = self.keystore.get(p.originator_ip)
        known = entry is not None and entry.public_key == p.public_key
        store = False
        if not known:
            if not self.validate_policy(self, p, now):
                self.stats.pkd_validation_skipped += 1
            else:
                if not self._certificate_ok(p.certificate, p.originator_ip, p.public_key):
                    return _discard("bad_cert")
                if not verify(p.public_key, signable_bytes(p), p.signature):
                    return _discard("bad_sig")
                # a validly signed but older certificate is a replayed retired key
                store = entry is None or p.certificate.serial > entry.serial
        key = self._dup_key(p)
        if key in self.dup:
            return _discard("duplicate")
        if not self._chain_ok(p.r_pkd, p.ttl, p.zone_radius, p.hops_traversed):
            return _discard("bad_chain")
        self.dup.add(key, now)
        if store:
            self._store_key(p.originator_ip, p.public_key, p.certificate.serial, p.seq, now)
        elif known and p.seq > entry.highest_seq:
            entry.highest_seq = p.seq
        return self._finish_accept(p)

    def _store_key(self, ip: int, public_key: PublicKey, serial: int, seq: int, now: float) -> None:
        old = self.keystore.get(ip)
        if old is not None and old.public_key != public_key:
            # new key, new sequence space
            self.lsdb.forget_originator(ip, now)
        evicted = self.keystore.insert(ip, public_key, serial, seq)
        self.stats.keys_evicted += len(evicted)

    # -- introspection ------------------------------------------------------------------------

    def state_digest(self) -> str:
        """Hash of the LSDB and key store logical state (no counters)."""
        h = hashlib.sha256(self.lsdb.state_bytes())
        h.update(b"|keys|")
        h.update(self.keystore.state_bytes())
        return h.hexdigest()
