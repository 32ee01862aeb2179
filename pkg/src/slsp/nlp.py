"""Neighbor Lookup Protocol: MAC/IP bindings, discrepancy detection and
per-neighbor control traffic rates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .crypto import verify
from .wire import Frame, HelloPacket, signable_bytes

if TYPE_CHECKING:
    from .engine import KeyStore

LN2 = math.log(2.0)


class NotificationKind(str, Enum):
    IP_CHANGED = "IpChanged"
    DUPLICATE_IP = "DuplicateIp"
    SELF_MAC_SPOOFED = "SelfMacSpoofed"


@dataclass(frozen=True)
class NlpNotification:
    kind: NotificationKind
    offending_mac: int
    offending_ip: int


@dataclass
class NeighborEntry:
    mac: int
    ip: int
    last_heard: float
    hello_verified: bool = False


class RateMeter:
    """Exponentially weighted arrival rate with a half-life, in packets/s.

    Each arrival adds ln2/h to a value that decays by 2^(-dt/h), which makes
    the steady-state estimate converge to the true arrival rate.
    """

    __slots__ = ("half_life", "_state")

    def __init__(self, half_life: float):
        if half_life <= 0:
            raise ValueError("half_life must be positive")
        self.half_life = half_life
        self._state: dict[int, tuple[float, float]] = {}

    def arrival(self, key: int, now: float) -> float:
        rate = self.rate(key, now) + LN2 / self.half_life
        self._state[key] = (rate, now)
        return rate

    def rate(self, key: int, now: float) -> float:
        state = self._state.get(key)
        if state is None:
            return 0.0
        rate, t = state
        return rate * 2.0 ** (-(now - t) / self.half_life)

    def forget_idle(self, now: float, floor: float = 1e-6) -> None:
        for key in [k for k in self._state if self.rate(k, now) < floor]:
            del self._state[key]


class NeighborTable:
    def __init__(self, self_mac: int, lost_timeout: float, half_life: float = 5.0):
        self.self_mac = self_mac
        self.lost_timeout = lost_timeout
        self.entries: dict[int, NeighborEntry] = {}
        self._by_ip: dict[int, int] = {}
        self.rates = RateMeter(half_life)
        self._expired: list[int] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, mac: int) -> bool:
        return mac in self.entries

    def mac_for_ip(self, ip: int) -> Optional[int]:
        return self._by_ip.get(ip)

    def _drop(self, mac: int) -> None:
        entry = self.entries.pop(mac)
        if self._by_ip.get(entry.ip) == mac:
            del self._by_ip[entry.ip]
        self._expired.append(entry.ip)

    def _drop_if_stale(self, mac: Optional[int], now: float) -> None:
        if mac is None:
            return
        entry = self.entries.get(mac)
        if entry is not None and now - entry.last_heard > self.lost_timeout:
            self._drop(mac)

    def observe_frame(self, frame: Frame, now: float) -> Optional[NlpNotification]:
        """Record an overheard frame; return a notification if it violates a
        binding rule. The caller must discard the packet on any notification.
        """
        mac, ip = frame.src_mac, frame.src_ip
        self.rates.arrival(mac, now)
        if mac == self.self_mac:
            return NlpNotification(NotificationKind.SELF_MAC_SPOOFED, mac, ip)
        # Lost neighbors are retired before judging the new frame, so a node
        # that stayed silent for the timeout re-enters as a new arrival.
        self._drop_if_stale(mac, now)
        self._drop_if_stale(self._by_ip.get(ip), now)
        owner = self._by_ip.get(ip)
        if owner is not None and owner != mac:
            return NlpNotification(NotificationKind.DUPLICATE_IP, mac, ip)
        entry = self.entries.get(mac)
        if entry is not None and entry.ip != ip:
            return NlpNotification(NotificationKind.IP_CHANGED, mac, ip)
        if entry is None:
            self.entries[mac] = NeighborEntry(mac, ip, now)
            self._by_ip[ip] = mac
        else:
            entry.last_heard = now
        return None

    def rate_of(self, mac: int, now: float) -> float:
        return self.rates.rate(mac, now)

    def mark_verified(self, mac: int) -> None:
        self.entries[mac].hello_verified = True

    def expire_lost(self, now: float) -> list[int]:
        """Remove entries idle for longer than the lost-neighbor timeout and
        return their IPs (including ones retired lazily since the last call)."""
        for mac in [m for m, e in self.entries.items() if now - e.last_heard > self.lost_timeout]:
            self._drop(mac)
        self.rates.forget_idle(now)
        expired, self._expired = self._expired, []
        return expired

    def verified_ips(self) -> list[int]:
        return sorted(e.ip for e in self.entries.values() if e.hello_verified)

    def neighbor_ips(self) -> set[int]:
        return set(self._by_ip)


def verify_hello(hello: HelloPacket, known_keys: "KeyStore") -> bool:
    entry = known_keys.get(hello.ip)
    if entry is None:
        return False
    return verify(entry.public_key, signable_bytes(hello), hello.signature)
