"""Deterministic slot-stepped experiment engine wiring all subsystems."""
from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import FlowProfile, coefficient_of_variation, estimate_hurst
from .control import (
    CalibrationTable,
    ControlError,
    InfeasibleError,
    SaturatedRegionError,
    apply_policy,
    forecast_profile,
    required_buffer,
    required_capacity,
    ALERT_DENY,
    GRANT_BUFFER,
    GRANT_CAPACITY,
)
from .detection import DetectorConfig, SecurityProfile, detect, merge_profiles
from .queueing import Batch, NodeState, QoSClass
from .routing import (
    FlowState,
    NetworkGraph,
    capacity_conservation_check,
    route_flow,
    update_all_costs,
)
from .trace import ATTACK, AttackSpec, TraceSpec, TrafficTrace
from .traffic import generate_trace, inject_attacks

MODE_NONE = "none"
MODE_MBCCC = "mbccc"
MODE_RM = "rm"
MODE_BOTH = "both"
MODES = (MODE_NONE, MODE_MBCCC, MODE_RM, MODE_BOTH)

MIN_HISTORY = 2 ** 10
MAX_HISTORY = 4096
MAX_BUFFER_GRANT = 4000


class ScenarioError(ValueError):
    pass


class AuditError(RuntimeError):
    """A post-hoc engine invariant failed."""


def load_default_topology() -> dict:
    ref = importlib.resources.files("fractalqos.data").joinpath("paper14.json")
    return json.loads(ref.read_text())


@dataclass(frozen=True)
class FlowConfig:
    flow_id: str
    src: str
    dst: str
    spec: TraceSpec
    qos: QoSClass
    attack: Optional[AttackSpec] = None
    channel: Optional[int] = None


@dataclass(frozen=True)
class NodeParams:
    service_rate: float = 60.0
    buffer: int = 30


@dataclass
class ScenarioConfig:
    flows: Sequence[FlowConfig]
    topology: Optional[dict] = None
    method_mode: str = MODE_NONE
    load_ratio: float = 0.7
    horizon: int = 512
    route_recalc: int = 1024
    detect_interval: int = 512
    duration: int = 2 ** 13
    seed: int = 0
    p_sec_gate: float = 0.6
    cost_scale: Optional[float] = None
    reference_capacity: float = 100.0
    node_defaults: NodeParams = field(default_factory=NodeParams)
    node_overrides: dict[str, NodeParams] = field(default_factory=dict)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tick_ms: float = 1.0

    def __post_init__(self) -> None:
        if self.method_mode not in MODES:
            raise ScenarioError(f"unknown method_mode {self.method_mode!r}")
        if not (0.2 <= self.load_ratio <= 0.9):
            raise ScenarioError("load_ratio must lie in [0.2, 0.9]")
        if self.duration < 2 ** 12:
            raise ScenarioError("duration must be >= 4096 slots")
        if self.horizon <= 0 or self.route_recalc <= 0 or self.detect_interval <= 0:
            raise ScenarioError("horizon, route_recalc and detect_interval must be > 0")
        if not self.flows:
            raise ScenarioError("at least one flow required")


@dataclass
class FlowStats:
    injected: int = 0
    delivered: int = 0
    dropped: int = 0
    epoch_injected: int = 0
    epoch_dropped: int = 0
    delay_slot_sum: int = 0
    jitter_abs_sum: float = 0.0
    jitter_pairs: int = 0
    last_delay: Optional[int] = None

    def record_delivery(self, count: int, delay_slots: int) -> None:
        self.delivered += count
        self.delay_slot_sum += delay_slots * count
        if self.last_delay is not None:
            self.jitter_abs_sum += abs(delay_slots - self.last_delay)
            self.jitter_pairs += 1
        # consecutive packets inside one batch share the delay: zero deltas
        self.jitter_pairs += count - 1
        self.last_delay = delay_slots

    @property
    def jitter_slots(self) -> float:
        return self.jitter_abs_sum / self.jitter_pairs if self.jitter_pairs else 0.0

    @property
    def loss_fraction(self) -> float:
        return self.dropped / self.injected if self.injected else 0.0

    @property
    def epoch_loss_fraction(self) -> float:
        return self.epoch_dropped / self.epoch_injected if self.epoch_injected else 0.0

    def reset_epoch(self) -> None:
        self.epoch_injected = 0
        self.epoch_dropped = 0


@dataclass
class SimReport:
    mode: str
    load_ratio: float
    seed: int
    channel_utilization: float
    lost_data_pct: float
    lost_data_pct_per_class: dict[int, float]
    jitter_ms: float
    p_sec: SecurityProfile
    events: dict[str, int]
    per_flow: dict[str, dict] = field(default_factory=dict)

    CSV_COLUMNS = (
        "mode",
        "load",
        "seed",
        "channel_utilization",
        "lost_data_pct",
        "jitter_ms",
        "p_tp",
        "p_fp",
        "alerts",
        "resizes",
        "reroutes",
        "rejections",
    )

    def to_row(self) -> list:
        return [
            self.mode,
            self.load_ratio,
            self.seed,
            round(self.channel_utilization, 6),
            round(self.lost_data_pct, 6),
            round(self.jitter_ms, 6),
            "" if self.p_sec.p_tp is None else round(self.p_sec.p_tp, 6),
            "" if self.p_sec.p_fp is None else round(self.p_sec.p_fp, 6),
            self.events.get("alert", 0),
            self.events.get("resize", 0),
            self.events.get("reroute", 0),
            self.events.get("reject", 0),
        ]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "load_ratio": self.load_ratio,
            "seed": self.seed,
            "channel_utilization": self.channel_utilization,
            "lost_data_pct": self.lost_data_pct,
            "lost_data_pct_per_class": self.lost_data_pct_per_class,
            "jitter_ms": self.jitter_ms,
            "p_sec": self.p_sec.to_dict(),
            "events": self.events,
            "per_flow": self.per_flow,
        }


class _Run:
    """Single-run state; built fresh per run() call for determinism."""

    def __init__(self, config: ScenarioConfig, calib: Optional[CalibrationTable]):
        self.config = config
        self.calib = calib
        self.mode = config.method_mode
        if self.mode in (MODE_MBCCC, MODE_BOTH) and calib is None:
            raise ScenarioError("calibration table required for MBCCC modes")
        topo = config.topology if config.topology is not None else load_default_topology()
        self.graph = NetworkGraph.from_json(topo)
        self.events: list[dict] = []
        self.event_counts: dict[str, int] = {}
        self.sec = SecurityProfile()
        self.tick_ms = config.tick_ms

        self.nodes: dict[str, NodeState] = {}
        self.max_service: dict[str, float] = {}
        for node, role in sorted(self.graph.nodes.items()):
            if role == "host":
                continue
            params = config.node_overrides.get(node, config.node_defaults)
            self.nodes[node] = NodeState(
                buffer_capacity=params.buffer,
                service_rate=params.service_rate,
                tick_ms=config.tick_ms,
            )
            self.max_service[node] = sum(
                link.capacity
                for (u, _v), link in self.graph.links.items()
                if u == node
            )

        total_weight = sum(fc.spec.mean_rate for fc in config.flows)
        scale = config.load_ratio * config.reference_capacity / total_weight
        self.flows: dict[str, FlowState] = {}
        self.flow_qos: dict[str, QoSClass] = {}
        self.traces: dict[str, TrafficTrace] = {}
        self.stats: dict[str, FlowStats] = {}
        num_channels = self.graph.num_channels()
        for idx, fc in enumerate(config.flows):
            if fc.spec.length < config.duration:
                raise ScenarioError(
                    f"flow {fc.flow_id}: trace length {fc.spec.length} shorter "
                    f"than duration {config.duration}"
                )
            eff_seed = (config.seed * 1_000_003 + idx) % (2 ** 63)
            spec = TraceSpec(
                length=fc.spec.length,
                target_hurst=fc.spec.target_hurst,
                mean_rate=fc.spec.mean_rate * scale,
                std_rate=fc.spec.std_rate * scale,
                cascade_weight=fc.spec.cascade_weight,
                tick_ms=config.tick_ms,
                seed=eff_seed,
            )
            trace = generate_trace(spec)
            if fc.attack is not None:
                trace = inject_attacks(trace, fc.attack)
            self.traces[fc.flow_id] = trace
            channel = (
                fc.channel
                if fc.channel is not None
                else min(fc.qos.qs, num_channels - 1)
            )
            self.flows[fc.flow_id] = FlowState(
                flow_id=fc.flow_id,
                src=fc.src,
                dst=fc.dst,
                qos=fc.qos,
                demand=spec.mean_rate,
                channel=channel,
            )
            self.flow_qos[fc.flow_id] = fc.qos
            self.stats[fc.flow_id] = FlowStats()

        self.cost_scale = (
            config.cost_scale
            if config.cost_scale is not None
            else self._default_cost_scale()
        )
        # per-node arrival history for detection and forecasting
        node_ids = sorted(self.nodes)
        self.node_index = {n: i for i, n in enumerate(node_ids)}
        self.arrivals_hist = np.zeros(
            (len(node_ids), config.duration), dtype=np.int64
        )
        self.attack_hist = np.zeros_like(self.arrivals_hist)
        # slots the detector has flagged as anomalous, network-wide
        self.flagged_slots = np.zeros(config.duration, dtype=bool)
        self.link_forwarded: dict[tuple[str, str], int] = {}
        self._next_hop_cache: dict[tuple[tuple[str, ...], str], Optional[str]] = {}
        self.firewall = next(
            (n for n, r in sorted(self.graph.nodes.items()) if r == "firewall"),
            node_ids[-1],
        )

    # -- setup helpers -------------------------------------------------

    def _default_cost_scale(self) -> float:
        for flow in self.flows.values():
            self.graph.admissible_paths(flow.src, flow.dst, flow.channel)
        return self.graph.mean_base_path_cost()

    def _log(self, slot: int, kind: str, subject: str, detail: str) -> None:
        self.events.append(
            {"slot": slot, "kind": kind, "subject": subject, "detail": detail}
        )
        self.event_counts[kind] = self.event_counts.get(kind, 0) + 1

    def _predict_node_loss(self, node: str, flow: FlowState) -> float:
        if self.calib is None or node not in self.nodes:
            return 0.0
        state = self.nodes[node]
        idx = self.node_index[node]
        recent = self.arrivals_hist[idx, max(0, self._slot - 1024) : self._slot]
        base_rate = float(recent.mean()) if recent.size else 0.0
        lam = base_rate + flow.demand
        profile = FlowProfile(
            lam=lam,
            hurst=self._flow_profile_cache[flow.flow_id].hurst,
            sigma_var=self._flow_profile_cache[flow.flow_id].sigma_var,
            delta_h=0.0,
        )
        try:
            needed = required_buffer(self.calib, state.service_rate, profile)
        except SaturatedRegionError:
            return 1.0
        except ControlError:
            return 0.0
        if needed <= state.buffer_capacity:
            return 0.0
        return 0.05 * (1.0 - state.buffer_capacity / max(1, needed))

    def _predict_node_wait_ms(self, node: str, flow: FlowState) -> float:
        if node not in self.nodes:
            return 0.0
        state = self.nodes[node]
        if state.service_rate <= 0:
            return float("inf")
        return state.occupancy / state.service_rate * self.tick_ms

    def _flow_source_profile(self, flow_id: str, upto: int) -> FlowProfile:
        trace = self.traces[flow_id]
        lo = max(0, upto - MAX_HISTORY)
        window = TrafficTrace(
            counts=trace.counts[lo:upto],
            labels=trace.labels[lo:upto],
            tick_ms=self.tick_ms,
        )
        try:
            hurst = estimate_hurst(window)
        except Exception:
            hurst = 0.5
        try:
            sigma = coefficient_of_variation(window)
        except Exception:
            sigma = 0.0
        return FlowProfile(
            lam=float(window.counts.mean()),
            hurst=hurst,
            sigma_var=sigma,
            delta_h=0.0,
        )

    # -- initial routing -----------------------------------------------

    def _initial_routes(self) -> None:
        self._slot = 0
        self._flow_profile_cache = {
            fid: self._flow_source_profile(fid, min(MIN_HISTORY, len(self.traces[fid])))
            for fid in sorted(self.flows)
        }
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            if self.mode in (MODE_RM, MODE_BOTH):
                result = route_flow(
                    self.graph,
                    flow,
                    predict_node_loss=self._predict_node_loss,
                    predict_node_wait_ms=self._predict_node_wait_ms,
                )
                if result.admitted:
                    self.graph.assign(flow, result.path)
                    continue
                self._log(0, "reject", fid, f"admission rejected: {result.rejection}")
            # best-effort fallback / baseline: cheapest admissible path
            paths = self.graph.admissible_paths(flow.src, flow.dst, flow.channel)
            best = min(paths, key=lambda pc: (pc.current_cost, len(pc.path), pc.path))
            self.graph.assign(flow, best.path)

    # -- per-epoch machinery -------------------------------------------

    def _run_detection(self, slot: int) -> None:
        idx = self.node_index[self.firewall]
        upto = slot
        lo = max(0, upto - MAX_HISTORY)
        counts = self.arrivals_hist[idx, lo:upto]
        attacks = self.attack_hist[idx, lo:upto]
        if counts.size < self.config.detector.window:
            return
        labels = (attacks * 2 > counts).astype(np.int8)
        trace = TrafficTrace(counts=counts, labels=labels, tick_ms=self.tick_ms)
        try:
            flags, profile = detect(trace, self.config.detector)
        except Exception:
            return
        self.sec = merge_profiles(self.sec, profile)
        window, stride = self.config.detector.window, self.config.detector.stride
        for i, flagged in enumerate(flags):
            if flagged:
                start = lo + i * stride
                self.flagged_slots[start : start + window] = True

    def _mbccc_epoch(self, slot: int) -> None:
        assert self.calib is not None
        for node in sorted(self.nodes):
            idx = self.node_index[node]
            lo = max(0, slot - MAX_HISTORY)
            counts = self.arrivals_hist[idx, lo:slot]
            if counts.size < MIN_HISTORY or counts.sum() == 0:
                continue
            # size resources for legitimate demand: replace detector-flagged
            # slots with the typical clean rate so attack surges do not
            # inflate the forecast
            mask = self.flagged_slots[lo:slot]
            if mask.any() and not mask.all():
                fill = int(round(float(np.median(counts[~mask]))))
                counts = np.where(mask, fill, counts)
            history = TrafficTrace(
                counts=counts,
                labels=np.zeros(counts.size, dtype=np.int8),
                tick_ms=self.tick_ms,
            )
            try:
                profile = forecast_profile(history, self.config.horizon)
            except Exception:
                continue
            state = self.nodes[node]
            needed_net: Optional[float]
            try:
                needed_net = required_capacity(
                    self.calib, state.buffer_capacity, profile
                )
            except (InfeasibleError, ControlError):
                needed_net = None

            # capacity first: it drains queues instead of growing them
            if needed_net is not None and needed_net > state.service_rate:
                target_net = min(needed_net, self.max_service[node])
                if target_net > state.service_rate:
                    decision = apply_policy(
                        state,
                        state.buffer_capacity,
                        target_net,
                        self.sec,
                        gate=self.config.p_sec_gate,
                    )
                    if decision.kind == GRANT_CAPACITY:
                        primary_share = self.max_service[node] / 2
                        if target_net > primary_share:
                            detail = (
                                f"capacity {state.service_rate:.1f}->{target_net:.1f} "
                                f"({target_net - primary_share:.1f} redistributed "
                                f"from sibling channel)"
                            )
                        else:
                            detail = (
                                f"capacity {state.service_rate:.1f}->{target_net:.1f}"
                            )
                        state.resize(state.buffer_capacity, target_net)
                        self._log(slot, "resize", node, detail)
                    elif decision.kind == ALERT_DENY:
                        self._log(
                            slot,
                            "alert",
                            node,
                            f"capacity request {target_net:.1f} denied "
                            f"(p_sec={decision.p_sec_scalar:.2f})",
                        )
            # size the buffer at whatever service rate is now in force, so a
            # capacity grant in the same epoch shrinks the buffer request
            needed_qw: Optional[int]
            try:
                needed_qw = required_buffer(self.calib, state.service_rate, profile)
            except (SaturatedRegionError, ControlError):
                needed_qw = None
            if needed_qw is not None and needed_qw > state.buffer_capacity:
                target_qw = min(needed_qw, MAX_BUFFER_GRANT)
                if target_qw > state.buffer_capacity:
                    decision = apply_policy(
                        state,
                        target_qw,
                        state.service_rate,
                        self.sec,
                        gate=self.config.p_sec_gate,
                    )
                    if decision.kind == GRANT_BUFFER:
                        detail = f"buffer {state.buffer_capacity}->{target_qw}"
                        state.resize(target_qw, state.service_rate)
                        self._log(slot, "resize", node, detail)
                    elif decision.kind == ALERT_DENY:
                        self._log(
                            slot,
                            "alert",
                            node,
                            f"buffer request {target_qw} denied "
                            f"(p_sec={decision.p_sec_scalar:.2f})",
                        )
            if needed_qw is None and needed_net is None:
                self._log(
                    slot, "alert", node, "forecast outside calibrated region"
                )

    def _channel_profiles(self, slot: int) -> dict[int, FlowProfile]:
        sums: dict[int, np.ndarray] = {}
        lo = max(0, slot - MAX_HISTORY)
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            seg = self.traces[fid].counts[lo:slot]
            if flow.channel in sums:
                sums[flow.channel] = sums[flow.channel] + seg
            else:
                sums[flow.channel] = seg.copy()
        profiles: dict[int, FlowProfile] = {}
        for channel, counts in sums.items():
            if counts.size < MIN_HISTORY or counts.sum() == 0:
                continue
            trace = TrafficTrace(
                counts=counts,
                labels=np.zeros(counts.size, dtype=np.int8),
                tick_ms=self.tick_ms,
            )
            try:
                hurst = estimate_hurst(trace)
                sigma = coefficient_of_variation(trace)
            except Exception:
                continue
            profiles[channel] = FlowProfile(
                lam=float(counts.mean()), hurst=hurst, sigma_var=sigma, delta_h=0.0
            )
        return profiles

    def _rm_epoch(self, slot: int) -> None:
        profiles = self._channel_profiles(slot)
        announcements = update_all_costs(
            self.graph, profiles, self.sec, self.cost_scale, now=slot
        )
        for ann in announcements:
            self._log(
                slot,
                "announce",
                f"{ann.src}->{ann.dst}#{ann.channel}",
                f"path {'-'.join(ann.path)} cost "
                f"{ann.old_cost:.2f}->{ann.new_cost:.2f}",
            )
        self._flow_profile_cache = {
            fid: self._flow_source_profile(fid, slot) for fid in sorted(self.flows)
        }
        self._check_violations(slot)

    def _check_violations(self, slot: int, cumulative: bool = False) -> None:
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            stats = self.stats[fid]
            loss = stats.loss_fraction if cumulative else stats.epoch_loss_fraction
            if loss <= flow.qos.max_loss:
                if not cumulative:
                    stats.reset_epoch()
                continue
            # the realized loss already motivates leaving the current path,
            # so rerouting needs only residual capacity, not the predictive
            # admission filters used at flow setup
            result = route_flow(self.graph, flow)
            if result.admitted and result.path != flow.assigned_path:
                old = flow.assigned_path
                self.graph.assign(flow, result.path)
                self._log(
                    slot,
                    "reroute",
                    fid,
                    f"loss {loss:.4f} > {flow.qos.max_loss}: "
                    f"{'-'.join(old or ())} -> {'-'.join(result.path)}",
                )
            else:
                why = result.rejection or "no better admissible path"
                self._log(
                    slot,
                    "alert",
                    fid,
                    f"loss {loss:.4f} > {flow.qos.max_loss}, "
                    f"reroute unavailable ({why})",
                )
            if not cumulative:
                stats.reset_epoch()

    # -- main loop ------------------------------------------------------

    def _next_hop(self, path: tuple[str, ...], node: str) -> Optional[str]:
        key = (path, node)
        if key not in self._next_hop_cache:
            nxt: Optional[str] = None
            for i, n in enumerate(path[:-1]):
                if n == node:
                    nxt = path[i + 1]
                    break
            self._next_hop_cache[key] = nxt
        return self._next_hop_cache[key]

    def execute(self) -> SimReport:
        config = self.config
        self._initial_routes()
        duration = config.duration
        pending: dict[str, list[Batch]] = {n: [] for n in self.nodes}
        future: dict[str, list[Batch]] = {n: [] for n in self.nodes}
        detection_on = self.mode in (MODE_MBCCC, MODE_RM, MODE_BOTH)
        mbccc_on = self.mode in (MODE_MBCCC, MODE_BOTH)
        rm_on = self.mode in (MODE_RM, MODE_BOTH)

        for t in range(duration):
            self._slot = t
            pending, future = future, pending
            for n in future:
                future[n].clear()

            for fid in sorted(self.flows):
                flow = self.flows[fid]
                count = int(self.traces[fid].counts[t])
                if count <= 0:
                    continue
                attack = bool(self.traces[fid].labels[t] == ATTACK)
                entry = flow.assigned_path[1]
                lifetime = (
                    t + int(round(flow.qos.max_delay_ms / self.tick_ms))
                    if flow.qos.qs >= 2
                    else None
                )
                meta = (fid, t, attack, flow.assigned_path)
                pending[entry].append(
                    Batch(
                        cls=flow.qos.qs,
                        count=count,
                        enqueue_slot=t,
                        deadline_slot=lifetime,
                        meta=meta,
                    )
                )
                self.stats[fid].injected += count
                self.stats[fid].epoch_injected += count
                key = (flow.assigned_path[0], entry)
                self.link_forwarded[key] = self.link_forwarded.get(key, 0) + count

            for node in sorted(self.nodes):
                arrivals = pending[node]
                state = self.nodes[node]
                idx = self.node_index[node]
                for batch in arrivals:
                    self.arrivals_hist[idx, t] += batch.count
                    if batch.meta[2]:
                        self.attack_hist[idx, t] += batch.count
                if not arrivals and state.occupancy == 0:
                    state.now = t + 1
                    continue
                state.now = t
                result = state.step(arrivals)
                for cls, count, meta in result.dropped_detail:
                    self.stats[meta[0]].dropped += count
                    self.stats[meta[0]].epoch_dropped += count
                for served in result.served:
                    fid, origin, attack, path = served.meta
                    nxt = self._next_hop(path, node)
                    if nxt is None:
                        continue
                    self.link_forwarded[(node, nxt)] = (
                        self.link_forwarded.get((node, nxt), 0) + served.count
                    )
                    if self.graph.nodes.get(nxt) == "host":
                        self.stats[fid].record_delivery(served.count, t - origin)
                    else:
                        qos = self.flows[fid].qos
                        deadline = (
                            origin + int(round(qos.max_delay_ms / self.tick_ms))
                            if qos.qs >= 2
                            else None
                        )
                        future[nxt].append(
                            Batch(
                                cls=served.cls,
                                count=served.count,
                                enqueue_slot=t + 1,
                                deadline_slot=deadline,
                                meta=served.meta,
                            )
                        )

            boundary = t + 1
            # detection is an independent monitoring process with its own
            # cadence, identical in every mode that enables it
            if detection_on and boundary % config.detect_interval == 0:
                self._run_detection(boundary)
            if mbccc_on and boundary % config.horizon == 0 and boundary >= MIN_HISTORY:
                self._mbccc_epoch(boundary)
            if rm_on and boundary % config.route_recalc == 0 and boundary >= MIN_HISTORY:
                self._rm_epoch(boundary)

        if rm_on:
            self._check_violations(duration, cumulative=True)
        # `pending` was consumed by the final slot's steps; only the
        # forward buffer still holds packets in transit.
        return self._finish(future)

    # -- reporting ------------------------------------------------------

    def _finish(self, in_transit: dict[str, list[Batch]]) -> SimReport:
        inflight: dict[str, int] = {fid: 0 for fid in self.flows}
        for batches in in_transit.values():
            for b in batches:
                inflight[b.meta[0]] += b.count
        for state in self.nodes.values():
            for queue in state.queues.values():
                for b in queue:
                    inflight[b.meta[0]] += b.count
        for fid in sorted(self.flows):
            s = self.stats[fid]
            if s.injected != s.delivered + s.dropped + inflight[fid]:
                raise AuditError(
                    f"conservation violated for flow {fid}: injected {s.injected} "
                    f"!= delivered {s.delivered} + dropped {s.dropped} "
                    f"+ inflight {inflight[fid]}"
                )
        if self.mode == MODE_NONE and any(
            k in self.event_counts for k in ("resize", "reroute", "alert")
        ):
            raise AuditError("baseline run produced control events")

        report_check = capacity_conservation_check(
            self.graph, list(self.flows.values())
        )
        if not report_check.ok:
            self._log(
                self.config.duration,
                "capacity-violation",
                "graph",
                report_check.detail,
            )

        per_class_injected: dict[int, int] = {}
        per_class_dropped: dict[int, int] = {}
        jitters = []
        per_flow = {}
        total_injected = total_dropped = 0
        for fid in sorted(self.flows):
            s = self.stats[fid]
            qs = self.flows[fid].qos.qs
            per_class_injected[qs] = per_class_injected.get(qs, 0) + s.injected
            per_class_dropped[qs] = per_class_dropped.get(qs, 0) + s.dropped
            total_injected += s.injected
            total_dropped += s.dropped
            jitters.append(s.jitter_slots * self.tick_ms)
            per_flow[fid] = {
                "injected": s.injected,
                "delivered": s.delivered,
                "dropped": s.dropped,
                "inflight": inflight[fid],
                "loss_fraction": s.loss_fraction,
                "max_loss": self.flows[fid].qos.max_loss,
                "jitter_ms": s.jitter_slots * self.tick_ms,
                "mean_delay_ms": (
                    s.delay_slot_sum / s.delivered * self.tick_ms
                    if s.delivered
                    else 0.0
                ),
                "path": list(self.flows[fid].assigned_path or ()),
            }

        utilizations = []
        for (u, v), link in sorted(self.graph.links.items()):
            forwarded = self.link_forwarded.get((u, v), 0)
            if forwarded and link.capacity > 0:
                utilizations.append(
                    forwarded / (link.capacity * self.config.duration)
                )
        return SimReport(
            mode=self.mode,
            load_ratio=self.config.load_ratio,
            seed=self.config.seed,
            channel_utilization=float(np.mean(utilizations)) if utilizations else 0.0,
            lost_data_pct=100.0 * total_dropped / total_injected
            if total_injected
            else 0.0,
            lost_data_pct_per_class={
                qs: 100.0 * per_class_dropped[qs] / per_class_injected[qs]
                if per_class_injected[qs]
                else 0.0
                for qs in sorted(per_class_injected)
            },
            jitter_ms=float(np.mean(jitters)) if jitters else 0.0,
            p_sec=self.sec,
            events=dict(sorted(self.event_counts.items())),
            per_flow=per_flow,
        )


def run(
    config: ScenarioConfig, calib: Optional[CalibrationTable] = None
) -> tuple[SimReport, list[dict]]:
    """Execute one scenario; returns the report and the event log."""
    state = _Run(config, calib)
    report = state.execute()
    return report, state.events


def audit_eq1(report: SimReport, events: list[dict]) -> list[str]:
    """Loss-bound audit: flows exceeding their class bound must have a
    reroute, alert or reject event; returns the list of violations."""
    flagged = {
        e["subject"] for e in events if e["kind"] in ("reroute", "alert", "reject")
    }
    failures = []
    for fid, info in report.per_flow.items():
        if info["loss_fraction"] > info["max_loss"] and fid not in flagged:
            failures.append(
                f"flow {fid}: loss {info['loss_fraction']:.4f} > "
                f"{info['max_loss']} with no reroute/alert"
            )
    return failures


def sweep(
    base: ScenarioConfig,
    loads: Sequence[float],
    seeds: Sequence[int],
    modes: Sequence[str] = MODES,
    calib: Optional[CalibrationTable] = None,
) -> list[SimReport]:
    """Cartesian product of loads x seeds x modes; one report per row."""
    from dataclasses import replace

    reports = []
    for load in loads:
        for seed in seeds:
            for mode in modes:
                cfg = replace(base, load_ratio=load, seed=seed, method_mode=mode)
                report, _ = run(cfg, calib)
                reports.append(report)
    return reports
