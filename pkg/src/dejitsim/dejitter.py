"""Relay jitter buffers with deadline preemption, plus the sink playout clock.

A buffered relay re-times each flow onto a fixed-period release grid
anchored at the flow's first arrival plus a re-sync hold. A packet ahead of
that grid is held just long enough to land back on it; a packet behind it
is sent at the earliest opportunity. The sink playout buffer uses the same
grid with its own constant offset.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum

from .model import Packet, Priority, SimTime


@dataclass
class FlowState:
    epoch: SimTime
    first_packet_id: int


@dataclass
class ScheduleModel:
    """Per-flow nominal arrival grid: epoch + k * interval per packet k.

    The epoch anchors on the flow's first arrival shifted by
    ``resync_hold_us``; that hold is the slack the buffer spends pulling
    late packets back onto the grid (0 makes the buffer a pass-through).
    Flows are keyed by source id and keep independent epochs.
    """

    interval_us: SimTime
    resync_hold_us: SimTime = 0
    flows: dict[int, FlowState] = field(default_factory=dict)

    def expected_arrival(self, pkt: Packet, now: SimTime) -> SimTime:
        flow = self.flows.get(pkt.source_id)
        if flow is None:
            flow = FlowState(epoch=now + self.resync_hold_us, first_packet_id=pkt.id)
            self.flows[pkt.source_id] = flow
        k = pkt.id - flow.first_packet_id
        return flow.epoch + k * self.interval_us


class EnqueueOutcome(Enum):
    QUEUED = "Queued"
    QUEUED_WITH_EVICTION = "QueuedWithEviction"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class EnqueueResult:
    outcome: EnqueueOutcome
    scheduled_release: SimTime | None = None
    evicted: "BufferEntry | None" = None


@dataclass
class BufferEntry:
    packet: Packet
    enqueued_at: SimTime
    scheduled_release: SimTime

    def sort_key(self) -> tuple[SimTime, SimTime, int]:
        return (self.scheduled_release, self.enqueued_at, self.packet.id)


@dataclass
class JitterBuffer:
    """Bounded FIFO ordered by scheduled release, with counted losses.

    Packets only ever leave through release, preemption or eviction, so
    ``enqueued == released + preemptions + evictions + len(queue)`` holds
    after every operation.
    """

    capacity_packets: int
    queue: list[BufferEntry] = field(default_factory=list)
    enqueued: int = 0
    released: int = 0
    preemptions: int = 0
    evictions: int = 0
    rejections: int = 0
    peak_occupancy: int = 0

    def __post_init__(self) -> None:
        if self.capacity_packets < 1:
            raise ValueError(f"capacity must be at least 1, got {self.capacity_packets}")

    @property
    def drops(self) -> int:
        return self.evictions + self.rejections

    def __len__(self) -> int:
        return len(self.queue)


def _eviction_victim(buf: JitterBuffer, arriving: Packet) -> BufferEntry | None:
    """Pick the overflow victim, or None if the arrival must be rejected.

    A queued Normal packet with the latest deadline always loses its slot.
    With only High packets queued, a Normal arrival is rejected and a High
    arrival displaces the latest-deadline High only if that deadline is
    strictly later than its own.
    """
    slackest = lambda entry: (entry.packet.lifetime_deadline, entry.enqueued_at, entry.packet.id)
    normals = [e for e in buf.queue if e.packet.priority is Priority.NORMAL]
    if normals:
        return max(normals, key=slackest)
    if arriving.priority is not Priority.HIGH:
        return None
    candidate = max(buf.queue, key=slackest)
    if candidate.packet.lifetime_deadline > arriving.lifetime_deadline:
        return candidate
    return None


def enqueue(buf: JitterBuffer, pkt: Packet, now: SimTime, sched: ScheduleModel) -> EnqueueResult:
    """Queue a packet for release at max(now, its expected arrival)."""
    release = max(now, sched.expected_arrival(pkt, now))
    evicted: BufferEntry | None = None
    if len(buf.queue) >= buf.capacity_packets:
        victim = _eviction_victim(buf, pkt)
        if victim is None:
            buf.rejections += 1
            return EnqueueResult(EnqueueOutcome.REJECTED)
        buf.queue.remove(victim)
        buf.evictions += 1
        evicted = victim

    entry = BufferEntry(packet=pkt, enqueued_at=now, scheduled_release=release)
    bisect.insort(buf.queue, entry, key=BufferEntry.sort_key)
    buf.enqueued += 1
    buf.peak_occupancy = max(buf.peak_occupancy, len(buf.queue))
    outcome = EnqueueOutcome.QUEUED if evicted is None else EnqueueOutcome.QUEUED_WITH_EVICTION
    return EnqueueResult(outcome, scheduled_release=release, evicted=evicted)


def pop_expired_high(buf: JitterBuffer, now: SimTime) -> BufferEntry | None:
    """Remove the most urgent queued High packet whose deadline has passed."""
    expired = [
        e for e in buf.queue
        if e.packet.priority is Priority.HIGH and e.packet.lifetime_deadline <= now
    ]
    if not expired:
        return None
    entry = min(expired, key=lambda e: (e.packet.lifetime_deadline, *e.sort_key()))
    buf.queue.remove(entry)
    buf.preemptions += 1
    return entry


def preempt_check(buf: JitterBuffer, now: SimTime) -> Packet | None:
    """The packet to transmit immediately ahead of the queue, if any."""
    entry = pop_expired_high(buf, now)
    return None if entry is None else entry.packet


def pop_due(buf: JitterBuffer, now: SimTime) -> list[BufferEntry]:
    """Remove and return every entry due by ``now``, in queue order."""
    due = []
    while buf.queue and buf.queue[0].scheduled_release <= now:
        due.append(buf.queue.pop(0))
        buf.released += 1
    return due


def release_ready(buf: JitterBuffer, now: SimTime) -> list[Packet]:
    return [entry.packet for entry in pop_due(buf, now)]


@dataclass
class PlayoutBuffer:
    """Destination release clock: first arrival + k * interval + playout delay."""

    interval_us: SimTime
    flows: dict[int, FlowState] = field(default_factory=dict)

    def expected_slot(self, pkt: Packet, now: SimTime) -> SimTime:
        flow = self.flows.get(pkt.source_id)
        if flow is None:
            flow = FlowState(epoch=now, first_packet_id=pkt.id)
            self.flows[pkt.source_id] = flow
        k = pkt.id - flow.first_packet_id
        return flow.epoch + k * self.interval_us


def playout_release(sink_buffer: PlayoutBuffer, pkt: Packet, now: SimTime, t_b_us: SimTime) -> SimTime:
    """When the destination plays the packet out; late packets play immediately."""
    if t_b_us < 0:
        raise ValueError(f"t_b_us must be non-negative, got {t_b_us}")
    return max(now, sink_buffer.expected_slot(pkt, now) + t_b_us)
