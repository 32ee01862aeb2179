"""Anti-clogging scheduler for inbound control packets.

Neighbors (keyed by MAC) are ranked by their measured control-traffic rate:
the slower a neighbor sends, the higher its class and the larger its
per-round quantum. Classes are served from highest priority down; inside a
class the queues are served round-robin, one packet per queue per pass.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

RateFn = Callable[[int, float], float]


class EnqueueResult(str, Enum):
    QUEUED = "Queued"
    DROPPED_FULL = "DroppedFull"


@dataclass(frozen=True)
class PriorityClass:
    class_index: int
    rate_band: tuple[float, float]
    quantum: int


@dataclass
class NeighborQueue:
    mac: int
    pending: deque = field(default_factory=deque)
    assigned_class: int = 0


class Scheduler:
    def __init__(
        self,
        rate_fn: RateFn,
        bands: Sequence[float] = (16.0, 32.0, 64.0),
        quanta: Sequence[int] = (8, 4, 2, 1),
        queue_cap: int = 64,
        starvation_timeout: float = 8.0,
    ):
        if len(quanta) != len(bands) + 1:
            raise ValueError("need exactly one more quantum than band boundary")
        if any(b <= a for a, b in zip(bands, bands[1:])) or (bands and bands[0] <= 0):
            raise ValueError("band boundaries must be positive and strictly increasing")
        if any(q2 >= q1 for q1, q2 in zip(quanta, quanta[1:])) or quanta[-1] < 1:
            raise ValueError("quanta must be positive and strictly decreasing")
        self.rate_fn = rate_fn
        self.bands = tuple(float(b) for b in bands)
        self.queue_cap = queue_cap
        self.starvation_timeout = starvation_timeout
        edges = (0.0, *self.bands, float("inf"))
        self.classes = tuple(
            PriorityClass(i, (edges[i], edges[i + 1]), q) for i, q in enumerate(quanta)
        )
        self.queues: dict[int, NeighborQueue] = {}
        self._cursor: dict[int, int] = {}
        self.served: dict[int, int] = {}
        self.dropped_full: dict[int, int] = {}
        self.dropped_starved: dict[int, int] = {}
        self.class_served = [0] * len(self.classes)
        self.last_round: list[tuple[int, int]] = []

    def classify(self, rate: float) -> int:
        return bisect_right(self.bands, rate)

    def backlog(self) -> int:
        return sum(len(q.pending) for q in self.queues.values())

    def enqueue(self, mac: int, item: Any, now: float) -> EnqueueResult:
        queue = self.queues.get(mac)
        if queue is None:
            queue = self.queues[mac] = NeighborQueue(mac)
        result = EnqueueResult.QUEUED
        if len(queue.pending) >= self.queue_cap:
            queue.pending.popleft()
            self.dropped_full[mac] = self.dropped_full.get(mac, 0) + 1
            result = EnqueueResult.DROPPED_FULL
        queue.pending.append((now, item))
        return result

    def run_round(self, now: float) -> list[Any]:
        """Serve one round and return the items in service order."""
        by_class: dict[int, list[NeighborQueue]] = {}
        for mac in sorted(self.queues):
            queue = self.queues[mac]
            queue.assigned_class = self.classify(self.rate_fn(mac, now))
            by_class.setdefault(queue.assigned_class, []).append(queue)
        out: list[Any] = []
        trace: list[tuple[int, int]] = []
        for cls in self.classes:
            members = by_class.get(cls.class_index)
            if not members:
                continue
            # rotate so service starts after the last-served queue of the class
            last = self._cursor.get(cls.class_index)
            start = 0
            if last is not None:
                start = next((k for k, q in enumerate(members) if q.mac > last), 0)
            order = members[start:] + members[:start]
            for _ in range(cls.quantum):
                progressed = False
                for queue in order:
                    if queue.pending:
                        _, item = queue.pending.popleft()
                        out.append(item)
                        trace.append((queue.mac, cls.class_index))
                        self.served[queue.mac] = self.served.get(queue.mac, 0) + 1
                        self.class_served[cls.class_index] += 1
                        self._cursor[cls.class_index] = queue.mac
                        progressed = True
                if not progressed:
                    break
        for mac in [m for m, q in self.queues.items() if not q.pending]:
            del self.queues[mac]
        self.last_round = trace
        return out

    def drop_starved(self, now: float) -> int:
        dropped = 0
        for queue in self.queues.values():
            while queue.pending and now - queue.pending[0][0] > self.starvation_timeout:
                queue.pending.popleft()
                dropped += 1
                self.dropped_starved[queue.mac] = self.dropped_starved.get(queue.mac, 0) + 1
        return dropped
