"""Source traffic: variable-rate bit arrivals, packetization, CBR shaping.

The packetizer accumulates in microbits (1e-6 bit units), so one bit per
second adds exactly one microbit per microsecond and the hot path stays in
integer arithmetic. Packet timestamps are floor-quantized onto the
microsecond grid: created_at is the instant accumulation for the packet
starts, packetized_at the (floored) instant the accumulator crosses a full
packet.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .model import MICROBITS_PER_BIT, Packet, Priority, SimTime


@dataclass(frozen=True)
class PacketizerState:
    """Bit accumulator for one source, plus the template for minted packets."""

    source_id: int
    dest_id: int
    packet_size_bytes: int
    lifetime_budget_us: SimTime
    now_us: SimTime = 0
    microbits: int = 0
    current_packet_created_at: SimTime = 0
    emitted_count: int = 0

    @property
    def bits_accumulated(self) -> int:
        return self.microbits // MICROBITS_PER_BIT

    @property
    def packet_microbits(self) -> int:
        return self.packet_size_bytes * 8 * MICROBITS_PER_BIT


def step_bits(state: PacketizerState, rate_bps: int, dt_us: int) -> tuple[PacketizerState, list[Packet]]:
    """Feed ``dt_us`` microseconds of bits at ``rate_bps`` into the accumulator.

    Emits one packet per full-packet crossing. The remainder is carried
    exactly, so total microbits in minus microbits left always equals
    packets out times the packet size.
    """
    if dt_us <= 0:
        raise ValueError(f"dt_us must be positive, got {dt_us}")
    if rate_bps < 0:
        raise ValueError(f"rate_bps must be non-negative, got {rate_bps}")

    packet_microbits = state.packet_microbits
    carried = state.microbits
    start = state.now_us
    added = rate_bps * dt_us
    created = state.current_packet_created_at
    if carried == 0 and added > 0:
        created = start

    total = carried + added
    emitted: list[Packet] = []
    crossings = total // packet_microbits
    for j in range(1, crossings + 1):
        crossed_at = start + (j * packet_microbits - carried) // rate_bps
        emitted.append(
            Packet(
                id=state.emitted_count + len(emitted),
                source_id=state.source_id,
                dest_id=state.dest_id,
                size_bytes=state.packet_size_bytes,
                priority=Priority.NORMAL,
                lifetime_deadline=created + state.lifetime_budget_us,
                created_at=created,
                packetized_at=crossed_at,
            )
        )
        created = crossed_at

    new_state = replace(
        state,
        now_us=start + dt_us,
        microbits=total - crossings * packet_microbits,
        current_packet_created_at=created,
        emitted_count=state.emitted_count + len(emitted),
    )
    return new_state, emitted


def shape_cbr(packets: list[Packet], interval_us: SimTime) -> list[tuple[Packet, SimTime]]:
    """Assign fixed-period departure times, shifting forward at late packets.

    Departures step by ``interval_us`` from the first packet's
    packetized_at; a packet that is not ready on its slot departs at its
    packetized_at and the grid resumes from there.
    """
    if interval_us <= 0:
        raise ValueError(f"interval_us must be positive, got {interval_us}")
    for earlier, later in zip(packets, packets[1:]):
        if later.packetized_at < earlier.packetized_at:
            raise ValueError("packets must be sorted by packetized_at")

    departures: list[tuple[Packet, SimTime]] = []
    slot: SimTime | None = None
    for pkt in packets:
        slot = pkt.packetized_at if slot is None else max(slot + interval_us, pkt.packetized_at)
        departures.append((pkt, slot))
    return departures


def assign_priorities(packets: list[Packet], fraction: float, seed: int) -> list[Packet]:
    """Mark a seeded Bernoulli(fraction) subset of packets High priority."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = random.Random(seed)
    marked = []
    for pkt in packets:
        priority = Priority.HIGH if rng.random() < fraction else Priority.NORMAL
        marked.append(replace(pkt, priority=priority))
    return marked


def packet_ledger_csv(packets: list[Packet]) -> str:
    """Per-source packet ledger: creation, packetization and deadline columns."""
    lines = ["packet_id,created_at,packetized_at,Tp_us,priority,deadline"]
    for pkt in packets:
        lines.append(
            f"{pkt.id},{pkt.created_at},{pkt.packetized_at},"
            f"{pkt.packetized_at - pkt.created_at},{pkt.priority.value},{pkt.lifetime_deadline}"
        )
    return "\n".join(lines) + "\n"
