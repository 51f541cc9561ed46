"""Concentric network generation, BFS layering and relay buffer placement.

The network grows outward from the sink at the area centre: each node is
drawn uniformly in the square and redrawn until it lands within radio range
of an already-placed node, so the finished graph is connected by
construction and forms concentric rings of BFS layers around the sink.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

from .model import (
    BufferMode,
    BufferPolicy,
    BufferSelection,
    ScenarioConfig,
    derive_seed,
)

PLACEMENT_ATTEMPTS_PER_NODE = 20_000


class ConnectivityUnachievable(RuntimeError):
    """The area/range/count combination cannot form a connected network."""


class UnknownNodeId(ValueError):
    """An explicit buffer-placement list named a node that does not exist."""


@dataclass(frozen=True)
class NodeState:
    id: int
    position: tuple[float, float]
    layer_n: int
    parent_id: int | None
    buffer_capacity_packets: int
    energy_j: float


@dataclass(frozen=True)
class Topology:
    nodes: tuple[NodeState, ...]  # dense ids, sorted: nodes[i].id == i
    sink_id: int
    adjacency: dict[int, tuple[int, ...]]

    def node(self, node_id: int) -> NodeState:
        node = self.nodes[node_id]
        assert node.id == node_id
        return node

    def path_to_sink(self, node_id: int) -> list[int]:
        """Node ids from ``node_id`` (exclusive) to the sink following parents."""
        path = []
        current = self.node(node_id)
        while current.parent_id is not None:
            path.append(current.parent_id)
            current = self.node(current.parent_id)
        return path


def _distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def generate(config: ScenarioConfig) -> Topology:
    """Place the sink at the centre and grow a connected network around it.

    Each remaining node is sampled uniformly in the square and resampled
    (bounded attempts) until it falls within ``comm_range_m`` of some
    already-placed node. Deterministic for a fixed ``rng_seed``.
    """
    side = math.sqrt(config.area_m2)
    rng = random.Random(derive_seed(config.rng_seed, "topology"))
    radius = config.comm_range_m
    radius_sq = radius * radius
    positions: list[tuple[float, float]] = [(side / 2.0, side / 2.0)]

    for index in range(1, config.node_count):
        for _attempt in range(PLACEMENT_ATTEMPTS_PER_NODE):
            x = rng.uniform(0.0, side)
            y = rng.uniform(0.0, side)
            if any((x - px) ** 2 + (y - py) ** 2 <= radius_sq for px, py in positions):
                positions.append((x, y))
                break
        else:
            raise ConnectivityUnachievable(
                f"could not place node {index} within {radius} m of the network "
                f"after {PLACEMENT_ATTEMPTS_PER_NODE} draws "
                f"(area_m2={config.area_m2}, node_count={config.node_count}, "
                f"comm_range_m={config.comm_range_m})"
            )

    adjacency = {
        i: tuple(
            j
            for j in range(config.node_count)
            if j != i and _distance(positions[i], positions[j]) <= radius
        )
        for i in range(config.node_count)
    }
    nodes = tuple(
        NodeState(
            id=i,
            position=positions[i],
            layer_n=0,
            parent_id=None,
            buffer_capacity_packets=0,
            energy_j=config.node_energy_j,
        )
        for i in range(config.node_count)
    )
    return assign_layers(Topology(nodes=nodes, sink_id=0, adjacency=adjacency))


def assign_layers(topology: Topology) -> Topology:
    """Set layer_n to BFS hop depth from the sink; parent = lowest-id upper neighbour."""
    dist: dict[int, int] = {topology.sink_id: 0}
    frontier = [topology.sink_id]
    while frontier:
        next_frontier = []
        for u in sorted(frontier):
            for w in topology.adjacency[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    next_frontier.append(w)
        frontier = next_frontier
    if len(dist) != len(topology.nodes):
        missing = sorted(set(range(len(topology.nodes))) - set(dist))
        raise ConnectivityUnachievable(f"graph is not connected; unreachable nodes: {missing}")

    relabelled = []
    for node in topology.nodes:
        if node.id == topology.sink_id:
            relabelled.append(replace(node, layer_n=0, parent_id=None))
            continue
        layer = dist[node.id]
        parent = min(w for w in topology.adjacency[node.id] if dist[w] == layer - 1)
        relabelled.append(replace(node, layer_n=layer, parent_id=parent))
    return replace(topology, nodes=tuple(relabelled))


def buffer_size_packets(n: int, policy: BufferPolicy) -> int:
    """Relay buffer capacity by layer: k*(4-n) packets for 1 <= n < 4, else 1."""
    if policy.mode is not BufferMode.EQ1:
        raise ValueError("buffer sizing is only defined for an Eq1 policy")
    if n < 1:
        raise ValueError("relay layers start at 1; the sink playout buffer is sized separately")
    if n < 4:
        return policy.proportionality_k * (4 - n)
    return 1


def place_buffers(topology: Topology, policy: BufferPolicy) -> Topology:
    """Assign buffer capacities to the selected relay nodes."""
    if policy.mode is BufferMode.NONE:
        selected: set[int] = set()
    elif policy.selection is BufferSelection.ALL_INNER_LAYERS:
        selected = {node.id for node in topology.nodes if node.layer_n >= 1}
    else:
        known = {node.id for node in topology.nodes}
        for nid in policy.explicit_ids:
            if nid not in known:
                raise UnknownNodeId(f"node {nid} is not in the topology")
            if nid == topology.sink_id:
                raise ValueError("the sink cannot host a relay jitter buffer")
        selected = set(policy.explicit_ids)

    nodes = tuple(
        replace(
            node,
            buffer_capacity_packets=(
                buffer_size_packets(node.layer_n, policy) if node.id in selected else 0
            ),
        )
        for node in topology.nodes
    )
    return replace(topology, nodes=nodes)


def topology_csv(topology: Topology) -> str:
    """CSV export, one row per node sorted by id."""
    lines = ["node_id,x,y,layer_n,parent_id,buffer_capacity_packets"]
    for node in topology.nodes:
        parent = "" if node.parent_id is None else str(node.parent_id)
        lines.append(
            f"{node.id},{node.position[0]!r},{node.position[1]!r},"
            f"{node.layer_n},{parent},{node.buffer_capacity_packets}"
        )
    return "\n".join(lines) + "\n"
