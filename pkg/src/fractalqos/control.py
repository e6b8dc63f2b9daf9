"""Buffer/capacity control: calibrated sizing, forecasting, grant policy."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .analysis import (
    DEFAULT_SIGMA_WINDOW,
    AnalysisError,
    FlowProfile,
    coefficient_of_variation,
    estimate_hurst,
)
from .detection import SecurityProfile
from .queueing import NodeState, QoSClass
from .trace import TraceSpec, TrafficTrace
from .traffic import generate_trace

P_SEC_GATE = 0.6
SATURATED = -1
_QW_UPPER = 10 ** 6

GRANT_BUFFER = "grant-buffer"
GRANT_CAPACITY = "grant-capacity"
ALERT_DENY = "alert-deny"


class ControlError(ValueError):
    pass


class SaturatedRegionError(ControlError):
    """Interpolation query touches saturated calibration cells."""


class InfeasibleError(ControlError):
    """No service rate within the table hull satisfies the buffer bound."""


@njit(cache=True)
def _queue_loss(arrivals, net, qw):  # pragma: no cover - jitted
    """Dropped/total packets for the single-class tail-drop recurrence.

    Mirrors NodeState.step for one class with no deadlines; equivalence is
    pinned by test.
    """
    q = 0
    carry = 0.0
    dropped = 0
    total = 0
    for k in range(arrivals.shape[0]):
        a = arrivals[k]
        total += a
        avail = carry + net
        budget = int(avail)
        served = q if q < budget else budget
        q -= served
        rem = budget - served
        served_new = a if a < rem else rem
        leftover = a - served_new
        space = qw - q
        if space < 0:
            space = 0
        take = leftover if leftover < space else space
        q += take
        dropped += leftover - take
        if q == 0:
            carry = 0.0
        else:
            carry = avail - budget
    return dropped, total


def queue_loss_fraction(arrivals: np.ndarray, net: float, qw: int) -> float:
    dropped, total = _queue_loss(
        np.ascontiguousarray(arrivals, dtype=np.int64), float(net), int(qw)
    )
    return dropped / total if total else 0.0


@dataclass(frozen=True)
class CalibrationGrid:
    h_values: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    sigma_values: tuple[float, ...] = (0.2, 0.5, 1.0, 2.0, 4.0)
    rho_values: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    trace_length: int = 2 ** 14
    net_ref: float = 100.0

    def __post_init__(self) -> None:
        for name, axis in (
            ("h_values", self.h_values),
            ("sigma_values", self.sigma_values),
            ("rho_values", self.rho_values),
        ):
            if len(axis) == 0 or any(b <= a for a, b in zip(axis, axis[1:])):
                raise ControlError(f"{name} must be non-empty and increasing")


@dataclass
class CalibrationTable:
    """Empirical realization of Q_w = f(net, lambda, H, sigma_var).

    ``cells[i,j,k]`` is the minimal buffer (packets) achieving the target
    loss at (h_axis[i], sigma_axis[j], rho_axis[k]); SATURATED (-1) marks
    unattainable cells. ``raw_cells`` holds the pre-isotonic values.
    """

    h_axis: np.ndarray
    sigma_axis: np.ndarray
    rho_axis: np.ndarray
    cells: np.ndarray
    raw_cells: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "axes": {
                "h": list(map(float, self.h_axis)),
                "sigma_var": list(map(float, self.sigma_axis)),
                "rho": list(map(float, self.rho_axis)),
            },
            "cells": self.cells.tolist(),
            "raw_cells": self.raw_cells.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CalibrationTable":
        return cls(
            h_axis=np.asarray(doc["axes"]["h"], dtype=np.float64),
            sigma_axis=np.asarray(doc["axes"]["sigma_var"], dtype=np.float64),
            rho_axis=np.asarray(doc["axes"]["rho"], dtype=np.float64),
            cells=np.asarray(doc["cells"], dtype=np.int64),
            raw_cells=np.asarray(doc["raw_cells"], dtype=np.int64),
            meta=dict(doc.get("meta", {})),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "CalibrationTable":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def measure_sigma_map(
    weights: Sequence[float] = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9),
    hurst: float = 0.7,
    mean_rate: float = 100.0,
    length: int = 2 ** 14,
    seeds: int = 3,
    window: int = DEFAULT_SIGMA_WINDOW,
) -> tuple[np.ndarray, np.ndarray]:
    """Measured mean sigma_var per cascade weight; monotone by construction."""
    ws = np.asarray(weights, dtype=np.float64)
    sigmas = np.empty(ws.size)
    for i, p in enumerate(ws):
        vals = []
        for seed in range(seeds):
            spec = TraceSpec(
                length=length,
                target_hurst=hurst,
                mean_rate=mean_rate,
                std_rate=mean_rate / 3,
                cascade_weight=float(p),
                seed=seed,
            )
            vals.append(coefficient_of_variation(generate_trace(spec), window))
        sigmas[i] = float(np.mean(vals))
    sigmas = np.maximum.accumulate(sigmas)
    return ws, sigmas


def _weight_for_sigma(
    sigma: float, weights: np.ndarray, sigmas: np.ndarray
) -> Optional[float]:
    """Invert the sigma_var(p) lookup; None when fGn alone already exceeds."""
    if sigma <= sigmas[0]:
        return None
    return float(np.interp(sigma, sigmas, weights))


def _min_buffer_for_loss(
    traces: list[np.ndarray], net: float, target_loss: float
) -> int:
    """Smallest buffer whose mean loss over the seed traces meets the target."""

    def ok(qw: int) -> bool:
        losses = [queue_loss_fraction(a, net, qw) for a in traces]
        return float(np.mean(losses)) <= target_loss

    lo, hi = 0, 8
    while not ok(hi):
        hi *= 4
        if hi > _QW_UPPER:
            return SATURATED
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def calibrate(
    targets: Sequence[QoSClass],
    grid: CalibrationGrid = CalibrationGrid(),
    seeds: int = 5,
) -> CalibrationTable:
    """Empirically build the minimal-buffer table over (H, sigma_var, rho)."""
    if seeds < 3:
        raise ControlError("calibration needs at least 3 seeds")
    if not targets:
        raise ControlError("at least one QoS target class required")
    target_loss = min(cls.max_loss for cls in targets)
    weights, sigmas = measure_sigma_map(length=grid.trace_length)
    shape = (len(grid.h_values), len(grid.sigma_values), len(grid.rho_values))
    raw = np.empty(shape, dtype=np.int64)
    started = time.time()
    for i, hurst in enumerate(grid.h_values):
        for j, sigma in enumerate(grid.sigma_values):
            weight = _weight_for_sigma(sigma, weights, sigmas)
            for k, rho in enumerate(grid.rho_values):
                if rho >= 1.0:
                    # Overloaded queue: no finite buffer bounds the loss in
                    # steady state, whatever a finite trace suggests.
                    raw[i, j, k] = SATURATED
                    continue
                lam = rho * grid.net_ref
                traces = []
                for seed in range(seeds):
                    spec = TraceSpec(
                        length=grid.trace_length,
                        target_hurst=hurst,
                        mean_rate=lam,
                        std_rate=lam / 3,
                        cascade_weight=weight,
                        seed=seed,
                    )
                    traces.append(generate_trace(spec).counts)
                raw[i, j, k] = _min_buffer_for_loss(traces, grid.net_ref, target_loss)
    cells = _isotonic(raw)
    meta = {
        "trace_length": grid.trace_length,
        "net_ref": grid.net_ref,
        "seeds": seeds,
        "target_loss": target_loss,
        "sigma_map": {"weights": weights.tolist(), "sigmas": sigmas.tolist()},
        "elapsed_s": round(time.time() - started, 2),
    }
    return CalibrationTable(
        h_axis=np.asarray(grid.h_values),
        sigma_axis=np.asarray(grid.sigma_values),
        rho_axis=np.asarray(grid.rho_values),
        cells=cells,
        raw_cells=raw,
        meta=meta,
    )


def _isotonic(raw: np.ndarray) -> np.ndarray:
    """Enforce non-decreasing cells along the H and rho axes.

    Saturated markers are treated as +inf so saturation propagates upward.
    """
    work = raw.astype(np.float64)
    work[raw == SATURATED] = np.inf
    work = np.maximum.accumulate(work, axis=0)
    work = np.maximum.accumulate(work, axis=2)
    out = np.where(np.isinf(work), SATURATED, work).astype(np.int64)
    return out


def _interp_weights(axis: np.ndarray, value: float) -> tuple[int, int, float]:
    """Clamped linear interpolation bracket (lo index, hi index, fraction)."""
    v = float(np.clip(value, axis[0], axis[-1]))
    hi = int(np.searchsorted(axis, v))
    if hi == 0:
        return 0, 0, 0.0
    if hi >= axis.size:
        return axis.size - 1, axis.size - 1, 0.0
    lo = hi - 1
    span = axis[hi] - axis[lo]
    return lo, hi, float((v - axis[lo]) / span) if span else 0.0


def required_buffer(
    table: CalibrationTable,
    net: float,
    profile: FlowProfile,
    sec: Optional[SecurityProfile] = None,
) -> int:
    """Trilinear interpolation of the minimal buffer at (H, sigma_var, rho).

    The security profile gates granting (apply_policy), not the size: the
    table is security-independent. Out-of-hull queries clamp to the
    boundary.
    """
    if net <= 0:
        raise ControlError("net must be > 0")
    rho = profile.lam / net
    i0, i1, fi = _interp_weights(table.h_axis, profile.hurst)
    j0, j1, fj = _interp_weights(table.sigma_axis, profile.sigma_var)
    k0, k1, fk = _interp_weights(table.rho_axis, rho)
    corners = table.cells[[i0, i1]][:, [j0, j1]][:, :, [k0, k1]].astype(np.float64)
    if np.any(corners == SATURATED):
        raise SaturatedRegionError(
            f"query (H={profile.hurst:.3f}, sigma={profile.sigma_var:.3f}, "
            f"rho={rho:.3f}) touches saturated cells"
        )
    wi = np.array([1 - fi, fi])
    wj = np.array([1 - fj, fj])
    wk = np.array([1 - fk, fk])
    value = float(np.einsum("i,j,k,ijk->", wi, wj, wk, corners))
    return int(np.ceil(value))


def required_capacity(
    table: CalibrationTable,
    q_w: int,
    profile: FlowProfile,
    sec: Optional[SecurityProfile] = None,
    tol: float = 1e-3,
) -> float:
    """Minimal service rate whose required buffer fits within ``q_w``."""
    if q_w < 0:
        raise ControlError("q_w must be >= 0")
    net_lo = profile.lam / table.rho_axis[-1]
    net_hi = profile.lam / table.rho_axis[0]

    def fits(net: float) -> bool:
        try:
            return required_buffer(table, net, profile, sec) <= q_w
        except SaturatedRegionError:
            return False

    if not fits(net_hi):
        raise InfeasibleError(
            f"no service rate in table hull satisfies buffer {q_w}"
        )
    if fits(net_lo):
        return float(net_lo)
    lo, hi = net_lo, net_hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


def forecast_profile(
    history: TrafficTrace, horizon: int, window: int = DEFAULT_SIGMA_WINDOW
) -> FlowProfile:
    """Persistence forecast: trailing-window re-estimate applied at t+horizon.

    The horizon sets the application window only; the estimate itself is
    the trailing one.
    """
    if len(history) < 2 ** 10:
        raise AnalysisError("history too short for forecasting (< 1024 slots)")
    if horizon <= 0:
        raise ControlError("horizon must be > 0")
    return FlowProfile(
        lam=float(history.counts.mean()),
        hurst=estimate_hurst(history),
        sigma_var=coefficient_of_variation(history, window),
        delta_h=0.0,
        window=window,
    )


@dataclass(frozen=True)
class ControlDecision:
    kind: str
    requested: float
    granted: float
    p_sec_scalar: float
    reason: str

    def __post_init__(self) -> None:
        if self.granted > self.requested:
            raise ControlError("granted must not exceed requested")
        if self.kind == ALERT_DENY and self.granted != 0:
            raise ControlError("alert-deny decisions grant nothing")


def apply_policy(
    current: NodeState,
    needed_q_w: int,
    needed_net: float,
    sec: SecurityProfile,
    gate: float = P_SEC_GATE,
) -> ControlDecision:
    """Grant the requested resources when detection confidence is high,
    otherwise raise an alert and deny."""
    buffer_growth = needed_q_w > current.buffer_capacity
    capacity_growth = needed_net > current.service_rate
    if not buffer_growth and not capacity_growth:
        return ControlDecision(
            kind=GRANT_BUFFER,
            requested=needed_q_w,
            granted=min(needed_q_w, current.buffer_capacity),
            p_sec_scalar=sec.scalar,
            reason="within current allocation",
        )
    if sec.scalar >= gate:
        if capacity_growth and not buffer_growth:
            return ControlDecision(
                kind=GRANT_CAPACITY,
                requested=needed_net,
                granted=needed_net,
                p_sec_scalar=sec.scalar,
                reason="overload forecast, detection confidence high",
            )
        return ControlDecision(
            kind=GRANT_BUFFER,
            requested=needed_q_w,
            granted=needed_q_w,
            p_sec_scalar=sec.scalar,
            reason="overload forecast, detection confidence high",
        )
    return ControlDecision(
        kind=ALERT_DENY,
        requested=float(needed_q_w if buffer_growth else needed_net),
        granted=0.0,
        p_sec_scalar=sec.scalar,
        reason="detection confidence low: alert raised, no allocation",
    )
