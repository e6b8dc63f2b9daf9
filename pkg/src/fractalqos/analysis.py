"""Fractal characterization of traffic traces: H, h(q), delta-h, sigma_var."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .trace import TraceError, TrafficTrace

DEFAULT_Q_GRID = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
DEFAULT_SIGMA_WINDOW = 100
MIN_HURST_LEN = 2 ** 10
MIN_MOMENT_LEN = 2 ** 12


class AnalysisError(ValueError):
    """Trace unsuitable for the requested estimator."""


class DegenerateTraceError(AnalysisError):
    """Zero-variance trace: no Hurst parameter is defined."""


@dataclass
class MomentScaling:
    """Fitted moment-scaling law per moment order."""

    q_grid: np.ndarray
    h_of_q: np.ndarray
    c_of_q: np.ndarray
    fit_r2: np.ndarray

    def __post_init__(self) -> None:
        self.q_grid = np.asarray(self.q_grid, dtype=np.float64)
        self.h_of_q = np.asarray(self.h_of_q, dtype=np.float64)
        self.c_of_q = np.asarray(self.c_of_q, dtype=np.float64)
        self.fit_r2 = np.asarray(self.fit_r2, dtype=np.float64)
        if np.any(np.diff(self.q_grid) <= 0):
            raise AnalysisError("q_grid must be strictly increasing")
        if not np.all(np.isfinite(self.h_of_q)):
            raise AnalysisError("h(q) estimates must be finite")

    @property
    def delta_h_raw(self) -> float:
        return float(self.h_of_q[0] - self.h_of_q[-1])


@dataclass(frozen=True)
class FlowProfile:
    """Traffic characterization tuple driving both control methods."""

    lam: float
    hurst: float
    sigma_var: float
    delta_h: float
    window: int = DEFAULT_SIGMA_WINDOW

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "hurst": self.hurst,
            "sigma_var": self.sigma_var,
            "delta_h": self.delta_h,
            "window": self.window,
        }


def _dyadic_scales(n: int, drop_edges: int = 2) -> np.ndarray:
    """Dyadic scale grid 2**2 .. 2**(log2 n - 4), optionally edge-trimmed."""
    top = int(np.log2(n)) - 4
    exps = np.arange(2, top + 1)
    if drop_edges and exps.size > 2 * drop_edges + 2:
        exps = exps[drop_edges:-drop_edges]
    return 2 ** exps


def _linfit(logx: np.ndarray, logy: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    slope, intercept = np.polyfit(logx, logy, 1)
    pred = slope * logx + intercept
    ss_res = float(np.sum((logy - pred) ** 2))
    ss_tot = float(np.sum((logy - np.mean(logy)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), max(0.0, min(1.0, r2))


def _aggregated_variance_hurst(x: np.ndarray, drop_edges: int = 2) -> float:
    """Slope of log block-mean variance vs log block size; H = 1 + slope/2."""
    n = x.shape[0]
    scales = _dyadic_scales(n, drop_edges=drop_edges)
    variances = []
    kept = []
    for m in scales:
        nblocks = n // m
        means = x[: nblocks * m].reshape(nblocks, m).mean(axis=1)
        v = float(np.var(means))
        if v > 0:
            variances.append(v)
            kept.append(m)
    if len(kept) < 3:
        raise DegenerateTraceError("not enough non-degenerate scales for H")
    slope, _, _ = _linfit(np.log(np.asarray(kept)), np.log(np.asarray(variances)))
    hurst = 1.0 + slope / 2.0
    return float(np.clip(hurst, 1e-3, 1.0 - 1e-3))


def estimate_hurst(trace: TrafficTrace) -> float:
    """Hurst parameter via the aggregated-variance method."""
    n = len(trace)
    if n < MIN_HURST_LEN:
        raise AnalysisError(f"trace too short for Hurst estimation: {n}")
    x = trace.counts.astype(np.float64)
    if np.var(x) == 0:
        raise DegenerateTraceError("constant trace has no Hurst parameter")
    return _aggregated_variance_hurst(x)


def estimate_generalized_hurst(
    trace: TrafficTrace, q_grid: Sequence[float] = DEFAULT_Q_GRID
) -> MomentScaling:
    """h(q) from structure functions of the cumulative deviation process.

    S_q(tau) = mean |Y(t+tau) - Y(t)|**q over a dyadic tau grid, with
    Y the cumulative sum of mean-centered counts; log S_q regressed on
    log tau gives q*h(q).
    """
    n = len(trace)
    if n < MIN_MOMENT_LEN:
        raise AnalysisError(f"trace too short for moment scaling: {n}")
    q = np.asarray(sorted(q_grid), dtype=np.float64)
    if q.size == 0:
        raise AnalysisError("q_grid must be non-empty")
    if np.any(q <= 0) or np.any(q > 5.0) or np.any(q < 0.5):
        raise AnalysisError("q orders must lie in [0.5, 5]")
    x = trace.counts.astype(np.float64)
    if np.var(x) == 0:
        raise DegenerateTraceError("constant trace has no moment scaling")
    y = np.cumsum(x - x.mean())
    taus = _dyadic_scales(n, drop_edges=2)
    log_s = np.empty((q.size, taus.size))
    for j, tau in enumerate(taus):
        inc = np.abs(y[tau:] - y[:-tau])
        inc = np.maximum(inc, 1e-12)
        for i, qi in enumerate(q):
            log_s[i, j] = float(np.log(np.mean(inc ** qi)))
    log_tau = np.log(taus.astype(np.float64))
    h = np.empty(q.size)
    c = np.empty(q.size)
    r2 = np.empty(q.size)
    for i, qi in enumerate(q):
        slope, intercept, rsq = _linfit(log_tau, log_s[i])
        h[i] = slope / qi
        c[i] = float(np.exp(intercept))
        r2[i] = rsq
    return MomentScaling(q_grid=q, h_of_q=h, c_of_q=c, fit_r2=r2)


def delta_h(ms: MomentScaling) -> float:
    """Range h(q_min) - h(q_max), clamped at zero; raw value on the object."""
    if ms.q_grid.size < 2:
        raise AnalysisError("delta_h needs at least two moment orders")
    return max(0.0, ms.delta_h_raw)


def coefficient_of_variation(
    trace: TrafficTrace, window: int = DEFAULT_SIGMA_WINDOW
) -> float:
    """std/mean of packet counts summed over disjoint windows."""
    if window < 1:
        raise AnalysisError("window must be >= 1")
    n = len(trace)
    if n < 2 * window:
        raise AnalysisError(f"window {window} too large for trace of length {n}")
    nwin = n // window
    sums = trace.counts[: nwin * window].reshape(nwin, window).sum(axis=1)
    mean = float(sums.mean())
    if mean <= 0:
        raise AnalysisError("zero-mean trace has no coefficient of variation")
    return float(sums.std() / mean)


def profile_flow(
    trace: TrafficTrace,
    window: int = DEFAULT_SIGMA_WINDOW,
    q_grid: Sequence[float] = DEFAULT_Q_GRID,
) -> FlowProfile:
    """Compose the estimators into the (lambda, H, sigma_var, delta_h) tuple."""
    hurst = estimate_hurst(trace)
    ms = estimate_generalized_hurst(trace, q_grid)
    return FlowProfile(
        lam=float(trace.counts.mean()),
        hurst=hurst,
        sigma_var=coefficient_of_variation(trace, window),
        delta_h=delta_h(ms),
        window=window,
    )
