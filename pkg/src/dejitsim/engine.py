"""Deterministic discrete-event kernel.

Events execute in (time, scheduling-sequence) order, so two runs of the
same config produce byte-identical traces. Links are contention-free
fixed-rate pipes: every hop costs the same transmit time plus latency, and
queueing happens only inside relay jitter buffers.
"""

from __future__ import annotations

import gzip
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .dejitter import (
    BufferEntry,
    EnqueueOutcome,
    JitterBuffer,
    PlayoutBuffer,
    ScheduleModel,
    enqueue,
    playout_release,
    pop_due,
    pop_expired_high,
)
from .model import (
    InvalidScenario,
    Packet,
    Priority,
    ScenarioConfig,
    SimTime,
    derive_seed,
    validate,
)
from .topology import Topology, generate, place_buffers
from .traffic import PacketizerState, step_bits


class EventKind(Enum):
    BITS_STEP = "BitsStep"
    SOURCE_EMIT = "SourceEmit"
    LINK_DELIVER = "LinkDeliver"
    BUFFER_RELEASE = "BufferRelease"
    PLAYOUT_DELIVER = "PlayoutDeliver"
    ENERGY_EXHAUSTED = "EnergyExhausted"


@dataclass(frozen=True)
class Event:
    at: SimTime
    seq: int
    kind: EventKind
    node_id: int
    packet: Packet | None = None
    scheduled_from: SimTime = 0


@dataclass(frozen=True)
class LinkModel:
    """Fixed-rate pipe: identical transmit time on every hop."""

    rate_bps: int
    per_hop_latency_us: SimTime
    packet_size_bytes: int

    @property
    def tx_time_us(self) -> SimTime:
        bits = self.packet_size_bytes * 8
        return -(-bits * 1_000_000 // self.rate_bps)  # ceil division

    @property
    def hop_delay_us(self) -> SimTime:
        return self.tx_time_us + self.per_hop_latency_us


@dataclass(frozen=True)
class EnergyModel:
    tx_j_per_bit: float = 0.0
    rx_j_per_bit: float = 0.0


@dataclass(frozen=True)
class TraceRecord:
    time_us: SimTime
    seq: int
    kind: str
    node_id: int
    packet_key: str
    detail: str = "-"

    def to_line(self) -> str:
        return f"{self.time_us} {self.kind} {self.node_id} {self.packet_key} {self.detail}"


@dataclass
class LiveCounters:
    """Counters the engine maintains while running; the metrics module
    recomputes the same quantities independently from the trace."""

    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    delivered_bytes: int = 0


@dataclass(frozen=True)
class BufferStats:
    capacity: int
    peak_occupancy: int
    enqueued: int
    released: int
    preemptions: int
    evictions: int
    rejections: int

    @property
    def drops(self) -> int:
        return self.evictions + self.rejections


@dataclass
class RunTrace:
    config: ScenarioConfig
    topology: Topology
    records: list[TraceRecord]
    packets: list[Packet]  # every finalized packet, in mint order
    dropped: dict[str, str]  # packet key -> drop reason
    live: LiveCounters
    buffer_stats: dict[int, BufferStats]

    def packet(self, key: str) -> Packet:
        for pkt in self.packets:
            if pkt.key == key:
                return pkt
        raise KeyError(key)


def drain_summary(trace: RunTrace) -> tuple[int, int, int, int]:
    """(sent, delivered, dropped, in_flight_at_end), counted from packet records."""
    sent = sum(1 for p in trace.packets if p.hop_timestamps)
    delivered = sum(1 for p in trace.packets if p.delivered_at is not None)
    dropped = len(trace.dropped)
    in_flight = sum(
        1
        for p in trace.packets
        if p.hop_timestamps and p.delivered_at is None and p.key not in trace.dropped
    )
    return sent, delivered, dropped, in_flight


@dataclass
class _SourceState:
    packetizer: PacketizerState
    levels: tuple[tuple[int, int], ...]
    level_index: int = 0
    last_departure: SimTime | None = None
    remaining: int = 0
    rng: random.Random = field(default_factory=random.Random)


class _Simulation:
    def __init__(self, config: ScenarioConfig, topology: Topology):
        self.config = config
        self.topology = topology
        self.link = LinkModel(config.link_rate_bps, config.per_hop_latency_us, config.packet_size_bytes)
        self.energy_model = EnergyModel(config.tx_j_per_bit, config.rx_j_per_bit)
        self.energy = {node.id: config.node_energy_j for node in topology.nodes}
        self.now: SimTime = 0
        self.next_seq = 0
        self.heap: list[tuple[SimTime, int, Event]] = []
        self.records: list[TraceRecord] = []
        self.packets: list[Packet] = []
        self.dropped: dict[str, str] = {}
        self.live = LiveCounters()
        self.sink_arrivals: dict[str, SimTime] = {}

        interval = config.traffic.cbr_out_interval_us
        self.buffers: dict[int, JitterBuffer] = {}
        self.schedules: dict[int, ScheduleModel] = {}
        for node in topology.nodes:
            cap = node.buffer_capacity_packets
            if cap >= 1:
                self.buffers[node.id] = JitterBuffer(capacity_packets=cap)
                # Re-sync hold grows with capacity: a buffer that can hold
                # b packets of a fixed-period flow can pull up to (b-1)
                # periods of lateness back onto the grid.
                self.schedules[node.id] = ScheduleModel(
                    interval_us=interval, resync_hold_us=(cap - 1) * interval
                )
        self.playout = PlayoutBuffer(interval_us=interval)

        levels = config.traffic.vbr_rate_levels or ((config.traffic.mean_bit_rate_bps, 1_000_000),)
        self.sources: dict[int, _SourceState] = {}
        for sid in config.traffic.source_ids:
            self.sources[sid] = _SourceState(
                packetizer=PacketizerState(
                    source_id=sid,
                    dest_id=topology.sink_id,
                    packet_size_bytes=config.packet_size_bytes,
                    lifetime_budget_us=config.traffic.lifetime_budget_us,
                ),
                levels=levels,
                remaining=config.traffic.packets_per_source,
                rng=random.Random(derive_seed(config.rng_seed, "priority", sid)),
            )

    # -- scheduling ---------------------------------------------------

    def schedule(self, at: SimTime, kind: EventKind, node_id: int, packet: Packet | None = None) -> None:
        if at < self.now:
            raise AssertionError(f"event {kind} scheduled at {at} before now={self.now}")
        event = Event(at=at, seq=self.next_seq, kind=kind, node_id=node_id, packet=packet, scheduled_from=self.now)
        heapq.heappush(self.heap, (at, self.next_seq, event))
        self.next_seq += 1

    def record(self, kind: str, node_id: int, packet: Packet | None, detail: str = "-") -> None:
        key = packet.key if packet is not None else "-"
        self.records.append(TraceRecord(self.now, len(self.records), kind, node_id, key, detail))

    def drop(self, packet: Packet, reason: str) -> None:
        assert packet.key not in self.dropped
        self.dropped[packet.key] = reason
        self.live.dropped += 1

    # -- energy -------------------------------------------------------

    def try_spend(self, node_id: int, joules: float) -> bool:
        """Deduct if affordable; a node that cannot pay does not act at all."""
        if joules <= 0:
            return True
        if self.energy[node_id] < joules:
            return False
        self.energy[node_id] -= joules
        return True

    def tx_cost(self) -> float:
        return self.config.packet_size_bytes * 8 * self.energy_model.tx_j_per_bit

    def rx_cost(self) -> float:
        return self.config.packet_size_bytes * 8 * self.energy_model.rx_j_per_bit

    # -- event handlers -------------------------------------------------

    def run(self) -> RunTrace:
        for sid, src in self.sources.items():
            if src.remaining > 0:
                self.schedule(0, EventKind.BITS_STEP, sid)

        duration = self.config.sim_duration_us
        while self.heap:
            at, _seq, event = heapq.heappop(self.heap)
            if at > duration:
                break
            assert at >= event.scheduled_from, "event causality violated"
            self.now = at
            handler = {
                EventKind.BITS_STEP: self.on_bits_step,
                EventKind.SOURCE_EMIT: self.on_source_emit,
                EventKind.LINK_DELIVER: self.on_link_deliver,
                EventKind.BUFFER_RELEASE: self.on_buffer_release,
                EventKind.PLAYOUT_DELIVER: self.on_playout_deliver,
            }[event.kind]
            handler(event)

        stats = {
            nid: BufferStats(
                capacity=buf.capacity_packets,
                peak_occupancy=buf.peak_occupancy,
                enqueued=buf.enqueued,
                released=buf.released,
                preemptions=buf.preemptions,
                evictions=buf.evictions,
                rejections=buf.rejections,
            )
            for nid, buf in self.buffers.items()
        }
        return RunTrace(
            config=self.config,
            topology=self.topology,
            records=self.records,
            packets=self.packets,
            dropped=self.dropped,
            live=self.live,
            buffer_stats=stats,
        )

    def on_bits_step(self, event: Event) -> None:
        src = self.sources[event.node_id]
        rate, dwell = src.levels[src.level_index % len(src.levels)]
        src.level_index += 1
        src.packetizer, emitted = step_bits(src.packetizer, rate, dwell)
        interval = self.config.traffic.cbr_out_interval_us
        fraction = self.config.traffic.high_priority_fraction
        for pkt in emitted:
            if src.remaining <= 0:
                break
            if src.rng.random() < fraction:
                pkt.priority = Priority.HIGH
            if src.last_departure is None:
                departure = pkt.packetized_at
            else:
                departure = max(src.last_departure + interval, pkt.packetized_at)
            src.last_departure = departure
            src.remaining -= 1
            self.packets.append(pkt)
            self.schedule(departure, EventKind.SOURCE_EMIT, event.node_id, pkt)
        if src.remaining > 0:
            self.schedule(self.now + dwell, EventKind.BITS_STEP, event.node_id)

    def on_source_emit(self, event: Event) -> None:
        pkt = event.packet
        node_id = event.node_id
        pkt.hop_timestamps.append((node_id, pkt.packetized_at, self.now))
        self.live.sent += 1
        self.record("EMIT", node_id, pkt)
        self.forward(node_id, pkt)

    def forward(self, node_id: int, pkt: Packet) -> None:
        """Transmit toward the parent, spending transmit energy."""
        if not self.try_spend(node_id, self.tx_cost()):
            self.record("NRG", node_id, pkt, "tx")
            self.drop(pkt, "energy-tx")
            return
        parent = self.topology.node(node_id).parent_id
        assert parent is not None, "the sink never forwards"
        self.schedule(self.now + self.link.hop_delay_us, EventKind.LINK_DELIVER, parent, pkt)

    def on_link_deliver(self, event: Event) -> None:
        pkt = event.packet
        node_id = event.node_id
        if not self.try_spend(node_id, self.rx_cost()):
            self.record("NRG", node_id, pkt, "rx")
            self.drop(pkt, "energy-rx")
            return
        self.record("HOP", node_id, pkt)

        if node_id == self.topology.sink_id:
            self.sink_arrivals[pkt.key] = self.now
            release = playout_release(self.playout, pkt, self.now, self.config.sink_playout_delay_us)
            self.schedule(release, EventKind.PLAYOUT_DELIVER, node_id, pkt)
            return

        buf = self.buffers.get(node_id)
        if buf is None:
            pkt.hop_timestamps.append((node_id, self.now, self.now))
            self.forward(node_id, pkt)
            return

        result = enqueue(buf, pkt, self.now, self.schedules[node_id])
        if result.outcome is EnqueueOutcome.REJECTED:
            pkt.hop_timestamps.append((node_id, self.now, self.now))
            self.record("REJ", node_id, pkt)
            self.drop(pkt, "rejected")
        else:
            if result.evicted is not None:
                victim = result.evicted
                victim.packet.hop_timestamps.append((node_id, victim.enqueued_at, self.now))
                self.record("EVT", node_id, victim.packet, f"by={pkt.key}")
                self.drop(victim.packet, "evicted")
            hold = result.scheduled_release - self.now
            self.record("ENQ", node_id, pkt, f"hold={hold}")
            self.schedule(result.scheduled_release, EventKind.BUFFER_RELEASE, node_id)
        self.process_buffer(node_id)

    def on_buffer_release(self, event: Event) -> None:
        self.process_buffer(event.node_id)

    def process_buffer(self, node_id: int) -> None:
        """Expired High packets jump the queue, then due packets go in order."""
        buf = self.buffers[node_id]
        while (entry := pop_expired_high(buf, self.now)) is not None:
            self.record("PRE", node_id, entry.packet)
            self.depart_buffer(node_id, entry)
        for entry in pop_due(buf, self.now):
            self.record("REL", node_id, entry.packet)
            self.depart_buffer(node_id, entry)

    def depart_buffer(self, node_id: int, entry: BufferEntry) -> None:
        entry.packet.hop_timestamps.append((node_id, entry.enqueued_at, self.now))
        self.forward(node_id, entry.packet)

    def on_playout_deliver(self, event: Event) -> None:
        pkt = event.packet
        arrival = self.sink_arrivals.pop(pkt.key)
        pkt.hop_timestamps.append((event.node_id, arrival, self.now))
        pkt.delivered_at = self.now
        self.live.delivered += 1
        self.live.delivered_bytes += pkt.size_bytes
        self.record("PLAY", event.node_id, pkt, f"delay={self.now - pkt.created_at}")
        self._assert_delivery_accounting(pkt, arrival)

    def _assert_delivery_accounting(self, pkt: Packet, sink_arrival: SimTime) -> None:
        assert pkt.chain_is_monotone(), f"non-monotone timestamps for {pkt.key}"
        t_p = pkt.packetized_at - pkt.created_at
        t_b = pkt.delivered_at - sink_arrival
        t_n = sink_arrival - pkt.packetized_at
        assert t_p + t_n + t_b == pkt.delivered_at - pkt.created_at
        hops = pkt.hop_timestamps
        assert hops[0][1] == pkt.packetized_at
        for (prev, nxt) in zip(hops, hops[1:]):
            assert nxt[1] == prev[2] + self.link.hop_delay_us, (
                f"hop gap for {pkt.key}: {prev} -> {nxt}"
            )


def run(config: ScenarioConfig, topology: Topology | None = None) -> RunTrace:
    """Run one scenario end to end and return the complete trace.

    ``topology`` overrides the generated one (handy for handcrafted graphs
    in tests); buffer placement must already be applied to it.
    """
    violations = validate(config)
    if violations:
        raise InvalidScenario("; ".join(str(v) for v in violations))
    if topology is None:
        topology = place_buffers(generate(config), config.buffer_policy)
    return _Simulation(config, topology).run()


# -- trace file I/O ----------------------------------------------------


def trace_lines(trace: RunTrace) -> list[str]:
    return [record.to_line() for record in trace.records]


def trace_text(trace: RunTrace) -> str:
    lines = trace_lines(trace)
    return "\n".join(lines) + "\n" if lines else ""


def write_trace(trace: RunTrace, path: str | Path) -> None:
    """Write the line-oriented trace; a .gz suffix selects gzip compression."""
    path = Path(path)
    data = trace_text(trace).encode("utf-8")
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(data)
    else:
        path.write_bytes(data)


def read_trace_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            text = fh.read()
    else:
        text = path.read_text()
    return [line for line in text.splitlines() if line]
