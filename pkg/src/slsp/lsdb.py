"""Zone-scoped link state database with two-sided link confirmation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional


class IngestResult(str, Enum):
    FRESH = "Fresh"
    DUPLICATE = "Duplicate"


@dataclass
class LinkReport:
    reporter: int
    peer: int
    seq: int
    reported_at: float


@dataclass
class OriginatorRecord:
    ip: int
    highest_seq: int
    last_update: float


def edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class LinkStateDatabase:
    """Directed link reports per originator; an undirected link is confirmed
    only while both endpoints report each other."""

    def __init__(self, confirm_ls: float, flush_timeout: Optional[float] = None):
        self.confirm_ls = confirm_ls
        self.flush_timeout = flush_timeout
        self.records: dict[int, OriginatorRecord] = {}
        self.reports: dict[int, dict[int, LinkReport]] = {}
        self.confirmed: dict[tuple[int, int], float] = {}
        self.ever_confirmed: set[tuple[int, int]] = set()

    # -- confirmation bookkeeping --------------------------------------------

    def _recheck(self, a: int, b: int, now: float) -> None:
        key = edge(a, b)
        mutual = b in self.reports.get(a, ()) and a in self.reports.get(b, ())
        if mutual:
            if key not in self.confirmed:
                self.confirmed[key] = now
                self.ever_confirmed.add(key)
        else:
            self.confirmed.pop(key, None)

    def _remove_reports(self, reporter: int, peers: Iterable[int], now: float) -> int:
        table = self.reports.get(reporter)
        if not table:
            return 0
        removed = 0
        for peer in list(peers):
            if table.pop(peer, None) is not None:
                removed += 1
                self._recheck(reporter, peer, now)
        if not table:
            del self.reports[reporter]
        return removed

    # -- operations ------------------------------------------------------------

    def ingest_report(self, originator: int, seq: int, links: Iterable[int], now: float) -> IngestResult:
        record = self.records.get(originator)
        if record is not None and seq <= record.highest_seq:
            return IngestResult.DUPLICATE
        if record is None:
            self.records[originator] = OriginatorRecord(originator, seq, now)
        else:
            record.highest_seq = seq
            record.last_update = now
        new = {p: LinkReport(originator, p, seq, now) for p in links if p != originator}
        old = self.reports.get(originator, {})
        if new:
            self.reports[originator] = new
        else:
            self.reports.pop(originator, None)
        for peer in set(old) | set(new):
            self._recheck(originator, peer, now)
        return IngestResult.FRESH

    def forget_originator(self, originator: int, now: float) -> None:
        """Drop everything about an originator, including its sequence record.
        Used when its key changes and its sequence space restarts."""
        self._remove_reports(originator, list(self.reports.get(originator, ())), now)
        self.records.pop(originator, None)

    def expire_unconfirmed(self, now: float) -> int:
        removed = 0
        for reporter in list(self.reports):
            stale = [
                p
                for p, rep in self.reports[reporter].items()
                if now - rep.reported_at > self.confirm_ls and edge(reporter, p) not in self.confirmed
            ]
            removed += self._remove_reports(reporter, stale, now)
        return removed

    def flush_stale(self, now: float) -> int:
        """Remove every report (confirmed or not) not refreshed within the
        flush timeout."""
        if self.flush_timeout is None:
            return 0
        removed = 0
        for reporter in list(self.reports):
            stale = [p for p, rep in self.reports[reporter].items() if now - rep.reported_at > self.flush_timeout]
            removed += self._remove_reports(reporter, stale, now)
        return removed

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {}
        for a, b in self.confirmed:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def distances(self, source: int) -> dict[int, int]:
        adj = self.adjacency()
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in adj.get(u, ()):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def prune_out_of_zone(self, self_ip: int, radius: int, now: float) -> int:
        dist = self.distances(self_ip)
        removed = 0
        for originator in list(self.reports):
            if originator == self_ip:
                continue
            d = dist.get(originator)
            if d is None:
                record = self.records.get(originator)
                if record is not None and now - record.last_update <= self.confirm_ls:
                    continue
            elif d <= radius:
                continue
            removed += self._remove_reports(originator, list(self.reports[originator]), now)
        return removed

    def route(self, self_ip: int, dst: int) -> Optional[list[int]]:
        """Shortest confirmed-link path; among equal-length paths, the one
        with the smallest next hop at every step."""
        if dst == self_ip:
            return [self_ip]
        adj = self.adjacency()
        to_dst = {dst: 0}
        queue = deque([dst])
        while queue and self_ip not in to_dst:
            u = queue.popleft()
            for v in adj.get(u, ()):
                if v not in to_dst:
                    to_dst[v] = to_dst[u] + 1
                    queue.append(v)
        if self_ip not in to_dst:
            return None
        path = [self_ip]
        node = self_ip
        while node != dst:
            node = min(v for v in adj[node] if to_dst.get(v) == to_dst[node] - 1)
            path.append(node)
        return path

    # -- export ----------------------------------------------------------------

    def confirmed_links(self) -> list[tuple[int, int]]:
        return sorted(self.confirmed)

    def snapshot(self) -> bytes:
        """Deterministic sorted edge list of confirmed links."""
        return "".join(f"{a:08x}-{b:08x}\n" for a, b in self.confirmed_links()).encode()

    def state_bytes(self) -> bytes:
        """Full logical state (reports, sequence records, confirmations)
        without timestamps, for before/after comparisons."""
        lines = [f"R {o:08x} {r.highest_seq}" for o, r in sorted(self.records.items())]
        for reporter in sorted(self.reports):
            for peer, rep in sorted(self.reports[reporter].items()):
                lines.append(f"L {reporter:08x} {peer:08x} {rep.seq}")
        lines.append(self.snapshot().decode())
        return "\n".join(lines).encode()
