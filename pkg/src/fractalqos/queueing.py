"""Slot-stepped finite-buffer multi-class priority queue for one node."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional


@dataclass(frozen=True)
class QoSClass:
    """Service class with its loss and delay bounds."""

    qs: int
    max_loss: float
    max_delay_ms: float

    def __post_init__(self) -> None:
        if not (0.0 < self.max_loss <= 1.0):
            raise ValueError(f"max_loss must be in (0,1], got {self.max_loss}")
        if self.max_delay_ms <= 0:
            raise ValueError(f"max_delay_ms must be > 0, got {self.max_delay_ms}")
        if self.qs < 0:
            raise ValueError("qs must be >= 0")


@dataclass
class Batch:
    """A run of identical packets: same class, enqueue slot and metadata."""

    cls: int
    count: int
    enqueue_slot: int
    deadline_slot: Optional[int] = None
    meta: Any = None


@dataclass
class ServedBatch:
    cls: int
    count: int
    delay_slots: int
    meta: Any = None


@dataclass
class ClassTally:
    arrived: int = 0
    served: int = 0
    dropped: int = 0
    delay_slot_sum: int = 0

    @property
    def queued(self) -> int:
        return self.arrived - self.served - self.dropped


@dataclass
class StepResult:
    served: list[ServedBatch] = field(default_factory=list)
    dropped: dict[int, int] = field(default_factory=dict)
    expired: dict[int, int] = field(default_factory=dict)
    # (cls, count, meta) for every dropped or expired run of packets
    dropped_detail: list[tuple[int, int, Any]] = field(default_factory=list)


class NodeState:
    """Finite buffer, strict priority across classes, FIFO within class.

    Service uses a fractional carry accumulator so a rate of 2.5 serves 2
    and 3 packets on alternating slots under backlog. Packets whose
    deadline slot has passed are discarded at the head without consuming
    service budget.
    """

    def __init__(
        self,
        buffer_capacity: int,
        service_rate: float,
        tick_ms: float = 1.0,
    ) -> None:
        if buffer_capacity < 0 or service_rate < 0:
            raise ValueError("buffer capacity and service rate must be >= 0")
        self.buffer_capacity = int(buffer_capacity)
        self.service_rate = float(service_rate)
        self.tick_ms = float(tick_ms)
        self.now = 0
        self.carry = 0.0
        self.queues: dict[int, deque[Batch]] = {}
        self.tallies: dict[int, ClassTally] = {}
        self.occupancy = 0

    def _queue(self, cls: int) -> deque[Batch]:
        if cls not in self.queues:
            self.queues[cls] = deque()
            self.tallies.setdefault(cls, ClassTally())
        return self.queues[cls]

    def _tally(self, cls: int) -> ClassTally:
        return self.tallies.setdefault(cls, ClassTally())

    def step(self, arrivals: Iterable[Batch]) -> StepResult:
        """Advance one slot.

        Service covers the backlog and this slot's arrivals, in strict
        priority order with queued packets ahead of arrivals within a
        class. Whatever the node did not manage to process goes to the
        buffer; the overflow beyond its capacity is tail-dropped.
        """
        self.now += 1
        result = StepResult()

        incoming: dict[int, list[Batch]] = {}
        for batch in arrivals:
            if batch.count < 0:
                raise ValueError("arrival counts must be >= 0")
            self._tally(batch.cls).arrived += batch.count
            incoming.setdefault(batch.cls, []).append(batch)

        budget = math.floor(self.carry + self.service_rate)
        used = 0
        for cls in sorted(set(self.queues) | set(incoming)):
            queue = self._queue(cls)
            while queue and used < budget:
                head = queue[0]
                if head.deadline_slot is not None and self.now > head.deadline_slot:
                    result.expired[cls] = result.expired.get(cls, 0) + head.count
                    result.dropped_detail.append((cls, head.count, head.meta))
                    self._tally(cls).dropped += head.count
                    self.occupancy -= head.count
                    queue.popleft()
                    continue
                take = min(head.count, budget - used)
                delay = self.now - head.enqueue_slot
                result.served.append(
                    ServedBatch(cls=cls, count=take, delay_slots=delay, meta=head.meta)
                )
                tally = self._tally(cls)
                tally.served += take
                tally.delay_slot_sum += delay * take
                used += take
                self.occupancy -= take
                if take == head.count:
                    queue.popleft()
                else:
                    head.count -= take
            for batch in incoming.get(cls, ()):
                remaining = batch.count
                if used < budget and remaining > 0:
                    take = min(remaining, budget - used)
                    result.served.append(
                        ServedBatch(cls=cls, count=take, delay_slots=0, meta=batch.meta)
                    )
                    tally = self._tally(cls)
                    tally.served += take
                    used += take
                    remaining -= take
                if remaining > 0:
                    space = self.buffer_capacity - self.occupancy
                    stored = min(remaining, max(0, space))
                    lost = remaining - stored
                    if stored > 0:
                        queue.append(
                            Batch(
                                cls=cls,
                                count=stored,
                                enqueue_slot=self.now,
                                deadline_slot=batch.deadline_slot,
                                meta=batch.meta,
                            )
                        )
                        self.occupancy += stored
                    if lost > 0:
                        self._tally(cls).dropped += lost
                        result.dropped[cls] = result.dropped.get(cls, 0) + lost
                        result.dropped_detail.append((cls, lost, batch.meta))
        if self.occupancy == 0:
            self.carry = 0.0
        else:
            self.carry = self.carry + self.service_rate - budget
        return result

    def resize(self, new_buffer: int, new_rate: float) -> int:
        """Apply new buffer/rate; returns packets shed if the buffer shrank.

        Shedding removes the newest packets first (global tail), breaking
        enqueue-slot ties toward the lowest-priority class.
        """
        if new_buffer < 0 or new_rate < 0:
            raise ValueError("resize targets must be >= 0")
        self.buffer_capacity = int(new_buffer)
        self.service_rate = float(new_rate)
        shed = 0
        while self.occupancy > self.buffer_capacity:
            candidate: Optional[int] = None
            best = (-1, -1)
            for cls, queue in self.queues.items():
                if not queue:
                    continue
                key = (queue[-1].enqueue_slot, cls)
                if key > best:
                    best = key
                    candidate = cls
            assert candidate is not None
            queue = self.queues[candidate]
            tail = queue[-1]
            excess = self.occupancy - self.buffer_capacity
            take = min(tail.count, excess)
            tail.count -= take
            if tail.count == 0:
                queue.pop()
            self.occupancy -= take
            self._tally(candidate).dropped += take
            shed += take
        return shed

    def queued_per_class(self) -> dict[int, int]:
        return {cls: sum(b.count for b in q) for cls, q in self.queues.items()}
