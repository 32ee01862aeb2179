"""Hashing, hash chains and an ideal signature model.

Signatures are HMAC-SHA256 tags keyed by a per-key secret that only the key
holder and a process-wide verification registry know. A ``PublicKey`` carries
the key id plus a fingerprint of the secret, so it can travel on the wire,
while forging a tag for someone else's key would require reading the
registry. Swapping in a real signature algorithm only touches this module.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass

DIGEST_SIZE = 32
KEY_ID_SIZE = 16
SIGNATURE_SIZE = 32

# key_id -> (secret, fingerprint); consulted by verify() only.
_REGISTRY: dict[bytes, tuple[bytes, bytes]] = {}


def digest(data: bytes) -> bytes:
    """The one-way function H (SHA-256)."""
    return hashlib.sha256(data).digest()


def iterate_hash(value: bytes, times: int) -> bytes:
    """Apply H ``times`` times; ``times == 0`` returns ``value`` unchanged."""
    if times < 0:
        raise ValueError("times must be >= 0")
    for _ in range(times):
        value = hashlib.sha256(value).digest()
    return value


@dataclass(frozen=True)
class HashChain:
    seed: bytes
    radius: int
    anchor: bytes
    first_link: bytes

    def link(self, i: int) -> bytes:
        """X_i = H^i(seed)."""
        return iterate_hash(self.seed, i)


def make_chain(seed: bytes, radius: int) -> HashChain:
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if len(seed) != DIGEST_SIZE:
        raise ValueError(f"seed must be {DIGEST_SIZE} bytes")
    first = digest(seed)
    return HashChain(seed, radius, iterate_hash(first, radius - 1), first)


def verify_chain_link(anchor: bytes, hops_traversed: bytes, remaining: int) -> bool:
    """True iff H^remaining(hops_traversed) == anchor."""
    if remaining < 0:
        raise ValueError("remaining applications must be >= 0")
    return hmac.compare_digest(iterate_hash(hops_traversed, remaining), anchor)


@dataclass(frozen=True)
class PublicKey:
    key_id: bytes
    fingerprint: bytes


@dataclass(frozen=True, repr=False)
class PrivateKey:
    key_id: bytes
    secret: bytes

    def __repr__(self) -> str:
        return f"PrivateKey(key_id={self.key_id.hex()})"


@dataclass(frozen=True)
class KeyPair:
    public_key: PublicKey
    private_key: PrivateKey

    @property
    def key_id(self) -> bytes:
        return self.public_key.key_id


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer_key_id: bytes


def generate_keypair(rng: random.Random) -> KeyPair:
    secret = rng.randbytes(32)
    key_id = digest(b"slsp-key-id" + secret)[:KEY_ID_SIZE]
    fingerprint = digest(b"slsp-public" + secret)
    _REGISTRY[key_id] = (secret, fingerprint)
    return KeyPair(PublicKey(key_id, fingerprint), PrivateKey(key_id, secret))


def sign(private_key: PrivateKey, message: bytes) -> Signature:
    tag = hmac.digest(private_key.secret, message, "sha256")
    return Signature(tag, private_key.key_id)


def verify(public_key: PublicKey, message: bytes, sig: Signature) -> bool:
    if sig.signer_key_id != public_key.key_id:
        return False
    entry = _REGISTRY.get(public_key.key_id)
    if entry is None or entry[1] != public_key.fingerprint:
        return False
    expected = hmac.digest(entry[0], message, "sha256")
    return hmac.compare_digest(expected, sig.value)


@dataclass(frozen=True)
class Certificate:
    subject_ip: int
    subject_public_key: PublicKey
    serial: int
    authority_signature: Signature

    def signed_bytes(self) -> bytes:
        return certificate_body(self.subject_ip, self.subject_public_key, self.serial)


def certificate_body(ip: int, public_key: PublicKey, serial: int) -> bytes:
    return (
        b"slsp-cert"
        + ip.to_bytes(4, "big")
        + serial.to_bytes(4, "big")
        + public_key.key_id
        + public_key.fingerprint
    )


class CertificateAuthority:
    """The single trusted issuer for one simulation.

    Serials increase with every issuance so a node can tell a replacement
    certificate (after a rekey) from a replayed old one.
    """

    def __init__(self, rng: random.Random):
        self.keypair = generate_keypair(rng)
        self._serial = 0

    @property
    def public_key(self) -> PublicKey:
        return self.keypair.public_key

    def issue(self, ip: int, public_key: PublicKey) -> Certificate:
        self._serial += 1
        body = certificate_body(ip, public_key, self._serial)
        return Certificate(ip, public_key, self._serial, sign(self.keypair.private_key, body))


def verify_certificate(cert: Certificate, authority_key: PublicKey) -> bool:
    return verify(authority_key, cert.signed_bytes(), cert.authority_signature)


@dataclass(frozen=True)
class NodeIdentity:
    mac: int
    ip: int
    keypair: KeyPair
    certificate: Certificate
