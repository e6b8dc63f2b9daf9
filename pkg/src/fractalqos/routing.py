"""Fractal-aware routing: cost recalculation, constrained path selection."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import networkx as nx

from .analysis import FlowProfile
from .detection import SecurityProfile
from .queueing import QoSClass

DEFAULT_NUM_CHANNELS = 2
DEFAULT_NUM_PATHS = 3
P_SEC_GATE = 0.6

REJECT_NO_CAPACITY = "no-capacity"
REJECT_LOSS_BOUND = "loss-bound"
REJECT_DELAY_BOUND = "delay-bound"


class RoutingError(ValueError):
    pass


@dataclass
class Link:
    capacity: float
    cost: float
    channels: list[float]

    def __post_init__(self) -> None:
        if sum(self.channels) > self.capacity + 1e-9:
            raise RoutingError(
                f"channel partition {self.channels} exceeds capacity {self.capacity}"
            )
        if self.cost < 0 or self.capacity < 0:
            raise RoutingError("link capacity and cost must be >= 0")


@dataclass
class PathCost:
    path: tuple[str, ...]
    base_cost: float
    current_cost: float
    last_recalc: int = 0


@dataclass
class FlowState:
    flow_id: str
    src: str
    dst: str
    qos: QoSClass
    demand: float
    channel: int = 0
    assigned_path: Optional[tuple[str, ...]] = None

    @property
    def qs(self) -> int:
        return self.qos.qs


@dataclass
class RouteResult:
    path: Optional[tuple[str, ...]] = None
    cost: float = 0.0
    rejection: Optional[str] = None

    @property
    def admitted(self) -> bool:
        return self.path is not None


@dataclass
class ConservationReport:
    ok: bool
    violating_channel: Optional[tuple[str, str, int]] = None
    detail: str = ""


class NetworkGraph:
    """Directed topology with per-link channel partitions and path costs."""

    def __init__(
        self,
        nodes: dict[str, str],
        links: dict[tuple[str, str], Link],
        num_paths: int = DEFAULT_NUM_PATHS,
    ) -> None:
        self.nodes = dict(nodes)
        self.links = dict(links)
        self.num_paths = num_paths
        self.graph = nx.DiGraph()
        for node, role in self.nodes.items():
            self.graph.add_node(node, role=role)
        for (u, v), link in self.links.items():
            if u not in self.nodes or v not in self.nodes:
                raise RoutingError(f"link ({u},{v}) references unknown node")
            self.graph.add_edge(u, v, cost=link.cost)
        # allocated bandwidth per (link, channel)
        self.usage: dict[tuple[str, str, int], float] = {}
        # admissible path costs per (src, dst, channel)
        self.path_costs: dict[tuple[str, str, int], list[PathCost]] = {}

    @classmethod
    def from_json(cls, doc: dict, num_paths: int = DEFAULT_NUM_PATHS) -> "NetworkGraph":
        nodes = {n["id"]: n.get("role", "router") for n in doc["nodes"]}
        links = {}
        for entry in doc["links"]:
            key = (entry["from"], entry["to"])
            links[key] = Link(
                capacity=float(entry["capacity"]),
                cost=float(entry["cost"]),
                channels=[float(c) for c in entry["channels"]],
            )
        return cls(nodes, links, num_paths=num_paths)

    @classmethod
    def load(cls, path: str, num_paths: int = DEFAULT_NUM_PATHS) -> "NetworkGraph":
        with open(path) as fh:
            return cls.from_json(json.load(fh), num_paths=num_paths)

    def num_channels(self) -> int:
        return max(len(link.channels) for link in self.links.values())

    def path_base_cost(self, path: Sequence[str]) -> float:
        return sum(self.links[(u, v)].cost for u, v in zip(path, path[1:]))

    def admissible_paths(self, src: str, dst: str, channel: int) -> list[PathCost]:
        """k-shortest simple paths by base cost, built lazily per endpoint pair."""
        if src not in self.nodes or dst not in self.nodes:
            raise RoutingError(f"unknown endpoints ({src}, {dst})")
        key = (src, dst, channel)
        if key not in self.path_costs:
            try:
                gen = nx.shortest_simple_paths(self.graph, src, dst, weight="cost")
                paths = list(itertools.islice(gen, self.num_paths))
            except nx.NetworkXNoPath:
                paths = []
            if not paths:
                raise RoutingError(f"no admissible paths from {src} to {dst}")
            self.path_costs[key] = [
                PathCost(
                    path=tuple(p),
                    base_cost=self.path_base_cost(p),
                    current_cost=self.path_base_cost(p),
                )
                for p in paths
            ]
        return self.path_costs[key]

    def channel_capacity(self, u: str, v: str, channel: int) -> float:
        chans = self.links[(u, v)].channels
        return chans[channel] if channel < len(chans) else 0.0

    def residual(self, u: str, v: str, channel: int) -> float:
        return self.channel_capacity(u, v, channel) - self.usage.get(
            (u, v, channel), 0.0
        )

    def path_residual(self, path: Sequence[str], channel: int) -> float:
        return min(self.residual(u, v, channel) for u, v in zip(path, path[1:]))

    def assign(self, flow: FlowState, path: tuple[str, ...]) -> None:
        if flow.assigned_path is not None:
            self.unassign(flow)
        for u, v in zip(path, path[1:]):
            key = (u, v, flow.channel)
            self.usage[key] = self.usage.get(key, 0.0) + flow.demand
        flow.assigned_path = path

    def unassign(self, flow: FlowState) -> None:
        if flow.assigned_path is None:
            return
        path = flow.assigned_path
        for u, v in zip(path, path[1:]):
            key = (u, v, flow.channel)
            self.usage[key] = self.usage.get(key, 0.0) - flow.demand
        flow.assigned_path = None

    def mean_base_path_cost(self) -> float:
        """Default cost increment scale: mean base cost of cached paths, or
        mean link cost times mean hop count as a topology-wide stand-in."""
        costs = [
            pc.base_cost for plist in self.path_costs.values() for pc in plist
        ]
        if costs:
            return sum(costs) / len(costs)
        link_costs = [link.cost for link in self.links.values()]
        return sum(link_costs) / max(1, len(link_costs))


def recalc_cost(
    base_cost: float,
    hurst: float,
    sigma_var: float,
    p_sec: float,
    cost_scale: float,
) -> float:
    """Four-branch path-cost recalculation from (H, sigma_var, p_sec).

    Inputs matching no branch leave the cost unchanged (the conservative
    completion of the non-exhaustive branch table).
    """
    if cost_scale < 0:
        raise RoutingError(f"cost_scale must be >= 0, got {cost_scale}")
    if not (0.0 < hurst < 1.0):
        raise RoutingError(f"hurst must be in (0,1), got {hurst}")
    if sigma_var < 0:
        raise RoutingError(f"sigma_var must be >= 0, got {sigma_var}")
    if not (0.0 <= p_sec <= 1.0):
        raise RoutingError(f"p_sec must be in [0,1], got {p_sec}")
    if hurst <= 0.5 and p_sec < P_SEC_GATE:
        return base_cost
    if p_sec > P_SEC_GATE:
        if hurst >= 0.9 or (hurst > 0.5 and sigma_var >= 3.0):
            return base_cost + cost_scale
        if 0.5 < hurst < 0.9 and sigma_var <= 1.0:
            return base_cost + (hurst - 0.5) * cost_scale
        if 0.5 < hurst < 0.9 and 1.0 < sigma_var < 3.0:
            return base_cost + (hurst - 0.5) * (sigma_var - 1.0) * cost_scale
    return base_cost


@dataclass
class CostAnnouncement:
    src: str
    dst: str
    channel: int
    path: tuple[str, ...]
    old_cost: float
    new_cost: float


def update_all_costs(
    graph: NetworkGraph,
    profiles: dict[int, FlowProfile],
    sec: SecurityProfile,
    cost_scale: float,
    now: int = 0,
) -> list[CostAnnouncement]:
    """Recalculate every cached path cost; returns announcements for changes."""
    announcements: list[CostAnnouncement] = []
    for (src, dst, channel), plist in graph.path_costs.items():
        profile = profiles.get(channel)
        for pc in plist:
            if profile is None:
                new_cost = pc.base_cost
            else:
                new_cost = recalc_cost(
                    pc.base_cost,
                    profile.hurst,
                    profile.sigma_var,
                    sec.scalar,
                    cost_scale,
                )
            if new_cost != pc.current_cost:
                announcements.append(
                    CostAnnouncement(
                        src=src,
                        dst=dst,
                        channel=channel,
                        path=pc.path,
                        old_cost=pc.current_cost,
                        new_cost=new_cost,
                    )
                )
            pc.current_cost = new_cost
            pc.last_recalc = now
    return announcements


def route_flow(
    graph: NetworkGraph,
    flow: FlowState,
    predict_node_loss: Optional[Callable[[str, FlowState], float]] = None,
    predict_node_wait_ms: Optional[Callable[[str, FlowState], float]] = None,
) -> RouteResult:
    """Least-cost admissible path with residual capacity and QoS admission.

    Ties break on hop count, then lexicographic node order. Admission
    requires the predicted per-node loss sum within the class loss bound
    and the predicted wait sum within the class delay bound.
    """
    if flow.demand <= 0:
        raise RoutingError("flow demand must be > 0")
    candidates = graph.admissible_paths(flow.src, flow.dst, flow.channel)
    feasible = [
        pc for pc in candidates if graph.path_residual(pc.path, flow.channel) >= flow.demand
    ]
    if not feasible:
        return RouteResult(rejection=REJECT_NO_CAPACITY)
    best = min(feasible, key=lambda pc: (pc.current_cost, len(pc.path), pc.path))
    if predict_node_loss is not None:
        total_loss = sum(predict_node_loss(node, flow) for node in best.path[1:-1])
        if total_loss > flow.qos.max_loss:
            return RouteResult(rejection=REJECT_LOSS_BOUND)
    if predict_node_wait_ms is not None:
        total_wait = sum(predict_node_wait_ms(node, flow) for node in best.path[1:-1])
        if total_wait > flow.qos.max_delay_ms:
            return RouteResult(rejection=REJECT_DELAY_BOUND)
    return RouteResult(path=best.path, cost=best.current_cost)


def capacity_conservation_check(
    graph: NetworkGraph, assignments: Sequence[FlowState]
) -> ConservationReport:
    """Verify assigned bandwidth never exceeds any channel's capacity."""
    sums: dict[tuple[str, str, int], float] = {}
    for flow in assignments:
        if flow.assigned_path is None:
            continue
        for u, v in zip(flow.assigned_path, flow.assigned_path[1:]):
            key = (u, v, flow.channel)
            sums[key] = sums.get(key, 0.0) + flow.demand
    for key in sorted(sums):
        u, v, channel = key
        cap = graph.channel_capacity(u, v, channel)
        if sums[key] > cap + 1e-9:
            return ConservationReport(
                ok=False,
                violating_channel=key,
                detail=f"channel {key}: assigned {sums[key]:.3f} > capacity {cap:.3f}",
            )
    return ConservationReport(ok=True)
