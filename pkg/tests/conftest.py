from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from slsp.crypto import CertificateAuthority, NodeIdentity, generate_keypair
from slsp.engine import NodeConfig, SlspNode
from slsp.wire import Frame


def ip_of(i: int) -> int:
    return 0x0A000000 + i + 1


def mac_of(i: int) -> int:
    return 0x020000000000 + i + 1


@dataclass
class Bench:
    """A handful of nodes sharing one authority, wired by hand."""

    authority: CertificateAuthority
    nodes: list[SlspNode]

    def introduce(self) -> None:
        """Preload every node's key store with every other node's key."""
        for a in self.nodes:
            for b in self.nodes:
                if a is not b:
                    a.keystore.insert(b.ip, b.identity.keypair.public_key, b.identity.certificate.serial, 0)

    def frame(self, sender: int, packet) -> Frame:
        node = self.nodes[sender]
        return Frame(node.mac, node.ip, packet)


def make_bench(n: int, config: NodeConfig | None = None, seed: int = 0, node_cls=SlspNode) -> Bench:
    config = config or NodeConfig()
    authority = CertificateAuthority(random.Random(f"bench-ca:{seed}"))
    nodes = []
    for i in range(n):
        rng = random.Random(f"bench-node:{seed}:{i}")
        kp = generate_keypair(rng)
        ident = NodeIdentity(mac_of(i), ip_of(i), kp, authority.issue(ip_of(i), kp.public_key))
        nodes.append(node_cls(ident, config, authority, rng, 0.0))
    return Bench(authority, nodes)


@pytest.fixture
def bench3() -> Bench:
    b = make_bench(3, NodeConfig(radius=2))
    b.introduce()
    return b


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line for a criterion; lines are echoed
    immediately and repeated in the terminal summary."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
