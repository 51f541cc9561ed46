"""QoS metrics and the per-packet delay decomposition.

All headline metrics are computed in exact rational arithmetic from the
packet records; floats appear only when a report is rendered. Jitter is
reported three ways: mean absolute deviation of delivery delay about its
mean (the primary figure), the population standard deviation, and the mean
absolute difference between consecutive deliveries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

from .engine import RunTrace, drain_summary
from .model import Packet, SimTime


class ZeroDuration(ValueError):
    """The throughput window has zero length."""


class NoDeliveries(ValueError):
    """A delay statistic was requested but nothing was delivered."""


class NoPacketsSent(ValueError):
    """Delivery fraction is undefined before anything is sent."""


class PacketNotDelivered(ValueError):
    """Delay decomposition only exists for delivered packets."""


def delivered_packets(trace: RunTrace) -> list[Packet]:
    """Delivered packets in delivery order (ties broken by source, then id)."""
    delivered = [p for p in trace.packets if p.delivered_at is not None]
    delivered.sort(key=lambda p: (p.delivered_at, p.source_id, p.id))
    return delivered


def throughput(trace: RunTrace, window: str = "total") -> Fraction:
    """Delivered payload bytes per second over the chosen time window."""
    if window not in ("total", "last-delivery"):
        raise ValueError(f"unknown throughput window {window!r}")
    received = sum(p.size_bytes for p in trace.packets if p.delivered_at is not None)
    if window == "total":
        duration = trace.config.sim_duration_us
    else:
        times = [p.delivered_at for p in trace.packets if p.delivered_at is not None]
        duration = max(times) if times else 0
    if duration == 0:
        raise ZeroDuration("total time is zero in this throughput window")
    return Fraction(received * 1_000_000, duration)


def per_packet_delays(trace: RunTrace) -> list[int]:
    """End-to-end delay (playout delivery minus first bit) per delivered packet."""
    return [p.delivered_at - p.created_at for p in delivered_packets(trace)]


def mean_end_to_end_delay(trace: RunTrace) -> Fraction:
    delays = per_packet_delays(trace)
    if not delays:
        raise NoDeliveries("no packets were delivered")
    return Fraction(sum(delays), len(delays))


def mad_jitter(delays: list[int]) -> Fraction:
    """Mean absolute deviation of the delays about their mean."""
    if not delays:
        raise NoDeliveries("no packets were delivered")
    mean = Fraction(sum(delays), len(delays))
    return sum(abs(d - mean) for d in delays) / len(delays)


def stddev_jitter(delays: list[int]) -> float:
    if not delays:
        raise NoDeliveries("no packets were delivered")
    mean = Fraction(sum(delays), len(delays))
    variance = sum((d - mean) ** 2 for d in delays) / len(delays)
    return math.sqrt(variance)


def interarrival_jitter(delays: list[int]) -> Fraction:
    """Mean absolute delay difference between consecutive deliveries."""
    if not delays:
        raise NoDeliveries("no packets were delivered")
    if len(delays) == 1:
        return Fraction(0)
    diffs = [abs(b - a) for a, b in zip(delays, delays[1:])]
    return Fraction(sum(diffs), len(diffs))


@dataclass(frozen=True)
class JitterStats:
    mad_us: Fraction
    stddev_us: float
    interarrival_us: Fraction


def jitter(trace: RunTrace) -> JitterStats:
    delays = per_packet_delays(trace)
    if not delays:
        raise NoDeliveries("no packets were delivered")
    return JitterStats(
        mad_us=mad_jitter(delays),
        stddev_us=stddev_jitter(delays),
        interarrival_us=interarrival_jitter(delays),
    )


def packet_delivery_fraction(trace: RunTrace) -> Fraction:
    """Delivered over sent, as an exact percentage."""
    sent, delivered, _dropped, _in_flight = drain_summary(trace)
    if sent == 0:
        raise NoPacketsSent("nothing was sent")
    return Fraction(delivered, sent) * 100


def format_percent(value: Fraction) -> str:
    quantized = (Decimal(value.numerator) / Decimal(value.denominator)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP
    )
    return str(quantized)


def decompose_delay(trace: RunTrace, pkt: Packet) -> tuple[int, int, int, int]:
    """(T_p, T_N, T_B, T_t) for one delivered packet, in integer microseconds.

    T_N is derived as T_t - T_p - T_B and cross-checked against the sum of
    per-hop residence and link times read off the hop timestamps; the two
    must agree exactly.
    """
    if pkt.delivered_at is None:
        raise PacketNotDelivered(f"packet {pkt.key} was not delivered")
    t_t = pkt.delivered_at - pkt.created_at
    t_p = pkt.packetized_at - pkt.created_at
    sink_hop = pkt.hop_timestamps[-1]
    t_b = pkt.delivered_at - sink_hop[1]
    t_n = t_t - t_p - t_b

    hops = pkt.hop_timestamps
    walked = 0
    for i, (node, arrived, departed) in enumerate(hops[:-1]):
        walked += departed - arrived  # residence: shaping or buffer hold
        walked += hops[i + 1][1] - departed  # link transit to the next hop
    if walked != t_n:
        raise AssertionError(
            f"delay decomposition mismatch for {pkt.key}: walk={walked}, residual={t_n}"
        )
    return t_p, t_n, t_b, t_t


@dataclass(frozen=True)
class LayerStats:
    peak_occupancy: int
    drops: int
    preemptions: int


@dataclass(frozen=True)
class MetricsReport:
    sent: int
    delivered: int
    dropped: int
    in_flight_at_end: int
    throughput_bytes_per_s: Fraction | None
    packet_delivery_fraction_percent: Fraction | None
    mean_end_to_end_delay_us: Fraction | None
    jitter_mad_us: Fraction | None
    jitter_stddev_us: float | None
    jitter_interarrival_us: Fraction | None
    per_packet_delays_us: tuple[int, ...]
    decomposition: tuple[tuple[str, int, int, int, int], ...]  # key, Tp, Tn, Tb, Tt
    per_layer: dict[int, LayerStats]


def compute_report(trace: RunTrace, throughput_window: str = "total") -> MetricsReport:
    sent, delivered, dropped, in_flight = drain_summary(trace)
    delays = per_packet_delays(trace)

    try:
        tput = throughput(trace, throughput_window)
    except ZeroDuration:
        tput = None
    pdf = None if sent == 0 else packet_delivery_fraction(trace)
    if delays:
        mean_delay = Fraction(sum(delays), len(delays))
        stats = JitterStats(mad_jitter(delays), stddev_jitter(delays), interarrival_jitter(delays))
    else:
        mean_delay = None
        stats = JitterStats(None, None, None)

    decomposition = tuple(
        (p.key, *decompose_delay(trace, p)) for p in delivered_packets(trace)
    )
    layer_of = {node.id: node.layer_n for node in trace.topology.nodes}
    per_layer: dict[int, LayerStats] = {}
    for nid, bstats in sorted(trace.buffer_stats.items()):
        layer = layer_of[nid]
        existing = per_layer.get(layer)
        if existing is None:
            per_layer[layer] = LayerStats(bstats.peak_occupancy, bstats.drops, bstats.preemptions)
        else:
            per_layer[layer] = LayerStats(
                peak_occupancy=max(existing.peak_occupancy, bstats.peak_occupancy),
                drops=existing.drops + bstats.drops,
                preemptions=existing.preemptions + bstats.preemptions,
            )

    return MetricsReport(
        sent=sent,
        delivered=delivered,
        dropped=dropped,
        in_flight_at_end=in_flight,
        throughput_bytes_per_s=tput,
        packet_delivery_fraction_percent=pdf,
        mean_end_to_end_delay_us=mean_delay,
        jitter_mad_us=stats.mad_us,
        jitter_stddev_us=stats.stddev_us,
        jitter_interarrival_us=stats.interarrival_us,
        per_packet_delays_us=tuple(delays),
        decomposition=decomposition,
        per_layer=dict(sorted(per_layer.items())),
    )


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, Fraction):
        return repr(float(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


REPORT_FIELDS = (
    "sent",
    "delivered",
    "dropped",
    "in_flight_at_end",
    "throughput_bytes_per_s",
    "packet_delivery_fraction_percent",
    "mean_end_to_end_delay_us",
    "jitter_mad_us",
    "jitter_stddev_us",
    "jitter_interarrival_us",
)


def report_text(report: MetricsReport) -> str:
    """Canonical key = value listing; per-layer buffer stats follow the scalars."""
    lines = []
    for name in REPORT_FIELDS:
        value = getattr(report, name)
        if name == "packet_delivery_fraction_percent" and value is not None:
            lines.append(f"{name} = {format_percent(value)}")
        else:
            lines.append(f"{name} = {_render(value)}")
    for layer, stats in report.per_layer.items():
        lines.append(f"layer.{layer}.peak_occupancy = {stats.peak_occupancy}")
        lines.append(f"layer.{layer}.drops = {stats.drops}")
        lines.append(f"layer.{layer}.preemptions = {stats.preemptions}")
    return "\n".join(lines) + "\n"


def report_csv_header() -> list[str]:
    return list(REPORT_FIELDS)


def report_csv_row(report: MetricsReport) -> list[str]:
    row = []
    for name in REPORT_FIELDS:
        value = getattr(report, name)
        if name == "packet_delivery_fraction_percent" and value is not None:
            row.append(format_percent(value))
        else:
            row.append(_render(value))
    return row


def decomposition_csv(report: MetricsReport) -> str:
    lines = ["packet,Tp_us,Tn_us,Tb_us,Tt_us"]
    for key, t_p, t_n, t_b, t_t in report.decomposition:
        lines.append(f"{key},{t_p},{t_n},{t_b},{t_t}")
    return "\n".join(lines) + "\n"
