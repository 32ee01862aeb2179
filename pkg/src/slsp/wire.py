"""Canonical byte encoding of the three SLSP packets and of link-layer frames.

Layout (big-endian, fields in declaration order)::

    Hello: 0x01 | mac(6) | ip(4) | signature(48)
    LSU:   0x02 | originator_ip(4) | seq(4) | r_lsu(1) | ttl(1)
                | zone_radius(32) | hops_traversed(32)
                | link_count(2) | links(4 each)
                | key_flag(1) [| public_key(48) | certificate(104)]
                | signature(48)
    PKD:   0x03 | originator_ip(4) | seq(4) | public_key(48) | certificate(104)
                | r_pkd(1) | ttl(1) | zone_radius(32) | hops_traversed(32)
                | signature(48)
    Frame: src_mac(6) | src_ip(4) | packet

public_key = key_id(16) | fingerprint(32); signature = signer_key_id(16) |
value(32); certificate = subject_ip(4) | serial(4) | public_key | signature.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Union

from .crypto import (
    DIGEST_SIZE,
    KEY_ID_SIZE,
    SIGNATURE_SIZE,
    Certificate,
    PublicKey,
    Signature,
    digest,
)

TAG_HELLO = 0x01
TAG_LSU = 0x02
TAG_PKD = 0x03

MAX_LINKS = 0xFFFF
ZERO_DIGEST = bytes(DIGEST_SIZE)

PUBLIC_KEY_SIZE = KEY_ID_SIZE + DIGEST_SIZE
SIG_SIZE = KEY_ID_SIZE + SIGNATURE_SIZE
CERT_SIZE = 4 + 4 + PUBLIC_KEY_SIZE + SIG_SIZE
FRAME_HEADER_SIZE = 10

_EMPTY_SIG = Signature(bytes(SIGNATURE_SIZE), bytes(KEY_ID_SIZE))


class MalformedPacket(ValueError):
    """Base class for undecodable input; nodes count these per neighbor."""

    reason = "malformed"


class TruncatedPacket(MalformedPacket):
    reason = "truncated"


class UnknownPacketType(MalformedPacket):
    reason = "unknown_type"


class TrailingBytes(MalformedPacket):
    reason = "trailing_bytes"


class InvalidField(MalformedPacket):
    reason = "invalid_field"


def _check_u(name: str, value: int, bits: int) -> None:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise ValueError(f"{name} must be an unsigned {bits}-bit integer, got {value!r}")


def _check_digest(name: str, value: bytes) -> None:
    if len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class AttachedKey:
    public_key: PublicKey
    certificate: Certificate


@dataclass(frozen=True)
class HelloPacket:
    mac: int
    ip: int
    signature: Signature = _EMPTY_SIG

    def __post_init__(self):
        _check_u("mac", self.mac, 48)
        _check_u("ip", self.ip, 32)


@dataclass(frozen=True)
class LsuPacket:
    originator_ip: int
    seq: int
    r_lsu: int
    ttl: int
    zone_radius: bytes
    hops_traversed: bytes
    links: tuple[int, ...] = ()
    attached_key: Optional[AttachedKey] = None
    signature: Signature = _EMPTY_SIG

    def __post_init__(self):
        _check_u("originator_ip", self.originator_ip, 32)
        _check_u("seq", self.seq, 32)
        _check_u("r_lsu", self.r_lsu, 8)
        _check_u("ttl", self.ttl, 8)
        _check_digest("zone_radius", self.zone_radius)
        _check_digest("hops_traversed", self.hops_traversed)
        if not isinstance(self.links, tuple):
            object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) > MAX_LINKS:
            raise ValueError(f"link list too long ({len(self.links)} > {MAX_LINKS})")
        for link in self.links:
            _check_u("link", link, 32)
        if len(set(self.links)) != len(self.links):
            raise ValueError("duplicate entries in link list")
        if self.originator_ip in self.links:
            raise ValueError("link list contains the originator")


@dataclass(frozen=True)
class PkdPacket:
    originator_ip: int
    seq: int
    public_key: PublicKey
    certificate: Certificate
    r_pkd: int
    ttl: int
    zone_radius: bytes
    hops_traversed: bytes
    signature: Signature = _EMPTY_SIG

    def __post_init__(self):
        _check_u("originator_ip", self.originator_ip, 32)
        _check_u("seq", self.seq, 32)
        _check_u("r_pkd", self.r_pkd, 8)
        _check_u("ttl", self.ttl, 8)
        _check_digest("zone_radius", self.zone_radius)
        _check_digest("hops_traversed", self.hops_traversed)


Packet = Union[HelloPacket, LsuPacket, PkdPacket]


@dataclass(frozen=True)
class Frame:
    """A link-layer frame as overheard: claimed source MAC, IP header source
    and the SLSP payload."""

    src_mac: int
    src_ip: int
    payload: Packet

    def __post_init__(self):
        _check_u("src_mac", self.src_mac, 48)
        _check_u("src_ip", self.src_ip, 32)


# -- encoding -----------------------------------------------------------------


def _public_key_bytes(pk: PublicKey) -> bytes:
    return pk.key_id + pk.fingerprint


def _signature_bytes(sig: Signature) -> bytes:
    return sig.signer_key_id + sig.value


def _certificate_bytes(cert: Certificate) -> bytes:
    return (
        struct.pack(">II", cert.subject_ip, cert.serial)
        + _public_key_bytes(cert.subject_public_key)
        + _signature_bytes(cert.authority_signature)
    )


def _body(packet: Packet, ttl: int, hops: bytes) -> bytes:
    if isinstance(packet, HelloPacket):
        return bytes([TAG_HELLO]) + packet.mac.to_bytes(6, "big") + packet.ip.to_bytes(4, "big")
    if isinstance(packet, LsuPacket):
        parts = [
            struct.pack(">BIIBB", TAG_LSU, packet.originator_ip, packet.seq, packet.r_lsu, ttl),
            packet.zone_radius,
            hops,
            struct.pack(f">H{len(packet.links)}I", len(packet.links), *packet.links),
        ]
        if packet.attached_key is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(_public_key_bytes(packet.attached_key.public_key))
            parts.append(_certificate_bytes(packet.attached_key.certificate))
        return b"".join(parts)
    if isinstance(packet, PkdPacket):
        return b"".join(
            (
                struct.pack(">BII", TAG_PKD, packet.originator_ip, packet.seq),
                _public_key_bytes(packet.public_key),
                _certificate_bytes(packet.certificate),
                struct.pack(">BB", packet.r_pkd, ttl),
                packet.zone_radius,
                hops,
            )
        )
    raise TypeError(f"not an SLSP packet: {type(packet).__name__}")


def encode(packet: Packet) -> bytes:
    if isinstance(packet, HelloPacket):
        return _body(packet, 0, ZERO_DIGEST) + _signature_bytes(packet.signature)
    return _body(packet, packet.ttl, packet.hops_traversed) + _signature_bytes(packet.signature)


def signable_bytes(packet: Packet) -> bytes:
    """The exact byte string an originator signs: the canonical encoding with
    ttl and hops_traversed zeroed and no signature."""
    return _body(packet, 0, ZERO_DIGEST)


def encode_frame(frame: Frame) -> bytes:
    return frame.src_mac.to_bytes(6, "big") + frame.src_ip.to_bytes(4, "big") + encode(frame.payload)


# -- decoding -----------------------------------------------------------------


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedPacket(f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def public_key(self) -> PublicKey:
        raw = self.take(PUBLIC_KEY_SIZE)
        return PublicKey(raw[:KEY_ID_SIZE], raw[KEY_ID_SIZE:])

    def signature(self) -> Signature:
        raw = self.take(SIG_SIZE)
        return Signature(raw[KEY_ID_SIZE:], raw[:KEY_ID_SIZE])

    def certificate(self) -> Certificate:
        ip, serial = self.unpack(">II")
        pk = self.public_key()
        return Certificate(ip, pk, serial, self.signature())


def _decode_at(r: _Reader) -> Packet:
    (tag,) = r.unpack(">B")
    try:
        if tag == TAG_HELLO:
            mac = int.from_bytes(r.take(6), "big")
            (ip,) = r.unpack(">I")
            return HelloPacket(mac, ip, r.signature())
        if tag == TAG_LSU:
            origin, seq, r_lsu, ttl = r.unpack(">IIBB")
            zone = r.take(DIGEST_SIZE)
            hops = r.take(DIGEST_SIZE)
            (count,) = r.unpack(">H")
            links = r.unpack(f">{count}I")
            (flag,) = r.unpack(">B")
            if flag == 0:
                attached = None
            elif flag == 1:
                pk = r.public_key()
                attached = AttachedKey(pk, r.certificate())
            else:
                raise InvalidField(f"bad key presence flag {flag:#x}")
            return LsuPacket(origin, seq, r_lsu, ttl, zone, hops, links, attached, r.signature())
        if tag == TAG_PKD:
            origin, seq = r.unpack(">II")
            pk = r.public_key()
            cert = r.certificate()
            r_pkd, ttl = r.unpack(">BB")
            zone = r.take(DIGEST_SIZE)
            hops = r.take(DIGEST_SIZE)
            return PkdPacket(origin, seq, pk, cert, r_pkd, ttl, zone, hops, r.signature())
    except MalformedPacket:
        raise
    except ValueError as exc:
        raise InvalidField(str(exc)) from exc
    raise UnknownPacketType(f"unknown packet type tag {tag:#04x}")


def decode(data: bytes) -> Packet:
    r = _Reader(bytes(data))
    packet = _decode_at(r)
    if r.pos != len(r.data):
        raise TrailingBytes(f"{len(r.data) - r.pos} trailing bytes after packet")
    return packet


@lru_cache(maxsize=8192)
def decode_frame(data: bytes) -> Frame:
    """Decode a frame. Memoized: one broadcast is decoded by every receiver."""
    r = _Reader(data)
    mac = int.from_bytes(r.take(6), "big")
    (ip,) = r.unpack(">I")
    packet = _decode_at(r)
    if r.pos != len(data):
        raise TrailingBytes(f"{len(data) - r.pos} trailing bytes after packet")
    return Frame(mac, ip, packet)


def relayed(packet: Union[LsuPacket, PkdPacket]) -> Union[LsuPacket, PkdPacket]:
    """The honest relay transformation: hash hops_traversed, decrement ttl."""
    if packet.ttl == 0:
        raise ValueError("cannot relay a packet with ttl 0")
    return replace(packet, ttl=packet.ttl - 1, hops_traversed=digest(packet.hops_traversed))


def mac_str(mac: int) -> str:
    return ":".join(f"{b:02x}" for b in mac.to_bytes(6, "big"))


def ip_str(ip: int) -> str:
    return ".".join(str(b) for b in ip.to_bytes(4, "big"))
