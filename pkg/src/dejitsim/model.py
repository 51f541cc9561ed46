"""Core domain types: simulation time, packets, and the scenario schema.

Time is integer microseconds everywhere inside the engine; millisecond
values appear only at reporting boundaries.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

SimTime = int  # non-negative microseconds

MICROBITS_PER_BIT = 1_000_000


class InvalidScenario(ValueError):
    """A scenario failed validation before a run."""


class ScenarioFormatError(ValueError):
    """A scenario or sweep file could not be parsed."""


def derive_seed(base: int, *parts: object) -> int:
    """Stable 64-bit sub-seed for a labelled random stream.

    hashlib keeps this independent of PYTHONHASHSEED, so identical configs
    give identical streams across processes.
    """
    text = "|".join([str(base), *(str(p) for p in parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class Priority(Enum):
    HIGH = "High"
    NORMAL = "Normal"


class BufferMode(Enum):
    NONE = "None"
    EQ1 = "Eq1"


class BufferSelection(Enum):
    ALL_INNER_LAYERS = "AllInnerLayers"
    EXPLICIT_LIST = "ExplicitList"


@dataclass(frozen=True)
class BufferPolicy:
    """Which relay nodes get a jitter buffer and how capacity scales.

    Under ``Eq1`` a relay at layer n holds ``proportionality_k * (4 - n)``
    packets for n < 4 and one packet for n >= 4; ``None`` disables all
    relay buffering.
    """

    mode: BufferMode = BufferMode.EQ1
    proportionality_k: int = 1
    selection: BufferSelection = BufferSelection.ALL_INNER_LAYERS
    explicit_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrafficConfig:
    """Source traffic: variable-rate bit arrivals shaped to a fixed period.

    ``vbr_rate_levels`` is a list of (rate_bps, dwell_us) segments cycled in
    order; an empty list means a constant ``mean_bit_rate_bps`` stream.
    """

    source_ids: tuple[int, ...] = ()
    mean_bit_rate_bps: int = 128_000
    vbr_rate_levels: tuple[tuple[int, int], ...] = ()
    cbr_out_interval_us: SimTime = 40_000
    packets_per_source: int = 50
    high_priority_fraction: float = 0.0
    lifetime_budget_us: SimTime = 10_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    area_m2: float = 2_500_000.0
    node_count: int = 100
    comm_range_m: float = 50.0
    packet_size_bytes: int = 512
    node_energy_j: float = 100.0
    link_rate_bps: int = 250_000
    per_hop_latency_us: SimTime = 1_000
    sink_playout_delay_us: SimTime = 0
    tx_j_per_bit: float = 0.0
    rx_j_per_bit: float = 0.0
    rng_seed: int = 42
    sim_duration_us: SimTime = 5_000_000
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    buffer_policy: BufferPolicy = field(default_factory=BufferPolicy)


@dataclass
class Packet:
    """One fixed-size packet and its full timestamp history.

    ``hop_timestamps`` rows are (node_id, arrived_at, departed_at), ordered
    source to sink; the source row uses packetized_at as its arrival.
    """

    id: int
    source_id: int
    dest_id: int
    size_bytes: int
    priority: Priority
    lifetime_deadline: SimTime
    created_at: SimTime
    packetized_at: SimTime
    hop_timestamps: list[tuple[int, SimTime, SimTime]] = field(default_factory=list)
    delivered_at: SimTime | None = None

    @property
    def key(self) -> str:
        """Globally unique id: packet ids are only unique per source."""
        return f"{self.source_id}:{self.id}"

    def remaining_lifetime(self, now: SimTime) -> int:
        return self.lifetime_deadline - now

    def timestamp_chain(self) -> list[SimTime]:
        chain = [self.created_at, self.packetized_at]
        for _node, arrived, departed in self.hop_timestamps:
            chain.append(arrived)
            chain.append(departed)
        if self.delivered_at is not None:
            chain.append(self.delivered_at)
        return chain

    def chain_is_monotone(self) -> bool:
        chain = self.timestamp_chain()
        return all(a <= b for a, b in zip(chain, chain[1:]))


@dataclass(frozen=True)
class Violation:
    field_name: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field_name}: {self.reason}"


def validate(config: ScenarioConfig) -> list[Violation]:
    """Return every violated invariant; an empty list means the config is runnable."""
    out: list[Violation] = []

    def positive(name: str, value) -> None:
        if not value > 0:
            out.append(Violation(name, f"must be strictly positive, got {value}"))

    def non_negative(name: str, value) -> None:
        if value < 0:
            out.append(Violation(name, f"must be non-negative, got {value}"))

    positive("area_m2", config.area_m2)
    if config.node_count < 2:
        out.append(Violation("node_count", f"need at least sink plus one node, got {config.node_count}"))
    positive("comm_range_m", config.comm_range_m)
    positive("packet_size_bytes", config.packet_size_bytes)
    positive("node_energy_j", config.node_energy_j)
    positive("link_rate_bps", config.link_rate_bps)
    non_negative("per_hop_latency_us", config.per_hop_latency_us)
    non_negative("sink_playout_delay_us", config.sink_playout_delay_us)
    non_negative("tx_j_per_bit", config.tx_j_per_bit)
    non_negative("rx_j_per_bit", config.rx_j_per_bit)
    positive("sim_duration_us", config.sim_duration_us)

    t = config.traffic
    positive("traffic.mean_bit_rate_bps", t.mean_bit_rate_bps)
    positive("traffic.cbr_out_interval_us", t.cbr_out_interval_us)
    if t.packets_per_source < 1:
        out.append(Violation("traffic.packets_per_source", f"must be at least 1, got {t.packets_per_source}"))
    if not 0.0 <= t.high_priority_fraction <= 1.0:
        out.append(Violation("traffic.high_priority_fraction", f"must lie in [0, 1], got {t.high_priority_fraction}"))
    positive("traffic.lifetime_budget_us", t.lifetime_budget_us)
    for i, (rate, dwell) in enumerate(t.vbr_rate_levels):
        if rate < 0:
            out.append(Violation("traffic.vbr_rate_levels", f"segment {i}: rate must be non-negative, got {rate}"))
        if dwell <= 0:
            out.append(Violation("traffic.vbr_rate_levels", f"segment {i}: dwell must be positive, got {dwell}"))
    seen: set[int] = set()
    for sid in t.source_ids:
        if not 1 <= sid < config.node_count:
            out.append(Violation("traffic.source_ids", f"node id {sid} outside 1..{config.node_count - 1} (0 is the sink)"))
        elif sid in seen:
            out.append(Violation("traffic.source_ids", f"node id {sid} listed twice"))
        seen.add(sid)

    b = config.buffer_policy
    if b.proportionality_k < 1:
        out.append(Violation("buffer_policy.proportionality_k", f"must be at least 1, got {b.proportionality_k}"))
    for nid in b.explicit_ids:
        if not 1 <= nid < config.node_count:
            out.append(Violation("buffer_policy.explicit_ids", f"node id {nid} outside 1..{config.node_count - 1} (0 is the sink)"))

    return out


# --- flat scenario-file format ------------------------------------------
#
# One `key = value` per line, keys matching the config field names, with
# nested sections spelled as dotted prefixes (traffic.*, buffer_policy.*).
# Blank lines and #-comments are ignored. Unknown keys are an error.


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ScenarioFormatError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ScenarioFormatError(f"{key}: expected a number, got {raw!r}") from None


def _parse_id_list(key: str, raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_parse_int(key, part) for part in raw.split(","))


def _parse_rate_levels(key: str, raw: str) -> tuple[tuple[int, int], ...]:
    raw = raw.strip()
    if not raw:
        return ()
    levels = []
    for part in raw.split(","):
        if ":" not in part:
            raise ScenarioFormatError(f"{key}: expected rate:dwell pairs, got {part!r}")
        rate, dwell = part.split(":", 1)
        levels.append((_parse_int(key, rate), _parse_int(key, dwell)))
    return tuple(levels)


def _format_rate_levels(levels: tuple[tuple[int, int], ...]) -> str:
    return ",".join(f"{rate}:{dwell}" for rate, dwell in levels)


def _parse_mode(key: str, raw: str) -> BufferMode:
    for mode in BufferMode:
        if mode.value == raw:
            return mode
    raise ScenarioFormatError(f"{key}: expected one of {[m.value for m in BufferMode]}, got {raw!r}")


def _parse_selection(key: str, raw: str) -> tuple[BufferSelection, tuple[int, ...]]:
    if raw == BufferSelection.ALL_INNER_LAYERS.value:
        return BufferSelection.ALL_INNER_LAYERS, ()
    prefix = BufferSelection.EXPLICIT_LIST.value + ":"
    if raw == BufferSelection.EXPLICIT_LIST.value:
        return BufferSelection.EXPLICIT_LIST, ()
    if raw.startswith(prefix):
        return BufferSelection.EXPLICIT_LIST, _parse_id_list(key, raw[len(prefix):])
    raise ScenarioFormatError(
        f"{key}: expected AllInnerLayers or ExplicitList:<ids>, got {raw!r}")


def _format_selection(policy: BufferPolicy) -> str:
    if policy.selection is BufferSelection.ALL_INNER_LAYERS:
        return policy.selection.value
    ids = ",".join(str(i) for i in policy.explicit_ids)
    return f"{policy.selection.value}:{ids}" if ids else policy.selection.value


@dataclass(frozen=True)
class ConfigKey:
    """One scenario-file key: how to read, write and update it."""

    name: str
    get: "callable"
    put: "callable"  # (config, raw string) -> new config


def _top(fname: str, parse) -> ConfigKey:
    def get(cfg: ScenarioConfig):
        return getattr(cfg, fname)

    def put(cfg: ScenarioConfig, raw: str) -> ScenarioConfig:
        return replace(cfg, **{fname: parse(fname, raw)})

    return ConfigKey(fname, get, put)


def _traffic(fname: str, parse) -> ConfigKey:
    key = f"traffic.{fname}"

    def get(cfg: ScenarioConfig):
        return getattr(cfg.traffic, fname)

    def put(cfg: ScenarioConfig, raw: str) -> ScenarioConfig:
        return replace(cfg, traffic=replace(cfg.traffic, **{fname: parse(key, raw)}))

    return ConfigKey(key, get, put)


def _policy_mode() -> ConfigKey:
    key = "buffer_policy.mode"

    def get(cfg: ScenarioConfig):
        return cfg.buffer_policy.mode.value

    def put(cfg: ScenarioConfig, raw: str) -> ScenarioConfig:
        return replace(cfg, buffer_policy=replace(cfg.buffer_policy, mode=_parse_mode(key, raw)))

    return ConfigKey(key, get, put)


def _policy_k() -> ConfigKey:
    key = "buffer_policy.proportionality_k"

    def get(cfg: ScenarioConfig):
        return cfg.buffer_policy.proportionality_k

    def put(cfg: ScenarioConfig, raw: str) -> ScenarioConfig:
        return replace(cfg, buffer_policy=replace(cfg.buffer_policy, proportionality_k=_parse_int(key, raw)))

    return ConfigKey(key, get, put)


def _policy_selection() -> ConfigKey:
    key = "buffer_policy.selection"

    def get(cfg: ScenarioConfig):
        return _format_selection(cfg.buffer_policy)

    def put(cfg: ScenarioConfig, raw: str) -> ScenarioConfig:
        selection, ids = _parse_selection(key, raw)
        return replace(cfg, buffer_policy=replace(cfg.buffer_policy, selection=selection, explicit_ids=ids))

    return ConfigKey(key, get, put)


CONFIG_KEYS: dict[str, ConfigKey] = {
    k.name: k
    for k in [
        _top("area_m2", _parse_float),
        _top("node_count", _parse_int),
        _top("comm_range_m", _parse_float),
        _top("packet_size_bytes", _parse_int),
        _top("node_energy_j", _parse_float),
        _top("link_rate_bps", _parse_int),
        _top("per_hop_latency_us", _parse_int),
        _top("sink_playout_delay_us", _parse_int),
        _top("tx_j_per_bit", _parse_float),
        _top("rx_j_per_bit", _parse_float),
        _top("rng_seed", _parse_int),
        _top("sim_duration_us", _parse_int),
        _traffic("source_ids", _parse_id_list),
        _traffic("mean_bit_rate_bps", _parse_int),
        _traffic("vbr_rate_levels", _parse_rate_levels),
        _traffic("cbr_out_interval_us", _parse_int),
        _traffic("packets_per_source", _parse_int),
        _traffic("high_priority_fraction", _parse_float),
        _traffic("lifetime_budget_us", _parse_int),
        _policy_mode(),
        _policy_k(),
        _policy_selection(),
    ]
}


def _format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return _format_rate_levels(value)
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def scenario_to_text(config: ScenarioConfig) -> str:
    lines = [f"{key.name} = {_format_value(key.get(config))}" for key in CONFIG_KEYS.values()]
    return "\n".join(lines) + "\n"


def scenario_from_text(text: str) -> ScenarioConfig:
    config = ScenarioConfig()
    seen: set[str] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ScenarioFormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        name, raw = (part.strip() for part in line.split("=", 1))
        key = CONFIG_KEYS.get(name)
        if key is None:
            raise ScenarioFormatError(f"line {lineno}: unknown key: {name}")
        if name in seen:
            raise ScenarioFormatError(f"line {lineno}: duplicate key: {name}")
        seen.add(name)
        config = key.put(config, raw)
    return config


def set_config_key(config: ScenarioConfig, name: str, raw: str) -> ScenarioConfig:
    """Update one scenario key from its textual form (used by sweeps)."""
    key = CONFIG_KEYS.get(name)
    if key is None:
        raise ScenarioFormatError(f"unknown key: {name}")
    return key.put(config, raw)


def load_scenario(path: str | Path) -> ScenarioConfig:
    return scenario_from_text(Path(path).read_text())


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(scenario_to_text(config))
