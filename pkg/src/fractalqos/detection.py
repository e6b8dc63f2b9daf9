"""Sliding-window threshold detector and confusion-matrix bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .trace import TrafficTrace
from .analysis import DegenerateTraceError, _aggregated_variance_hurst

_BASELINE_CAP = 50
_MIN_BASELINE = 5
_HURST_CONTEXT = 1024
_MIN_HURST_CONTEXT = 256


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 256
    stride: int = 64
    rate_z_threshold: float = 3.0
    hurst_shift_threshold: float = 0.15

    def __post_init__(self) -> None:
        if self.window < 64:
            raise DetectionError("window must be >= 64")
        if not (0 < self.stride <= self.window):
            raise DetectionError("stride must be in [1, window]")


@dataclass(frozen=True)
class SecurityProfile:
    """Confusion counts and rates; ``scalar`` is the value gated against 0.6."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def p_tp(self) -> Optional[float]:
        total = self.tp + self.fn
        return self.tp / total if total else None

    @property
    def p_fn(self) -> Optional[float]:
        total = self.tp + self.fn
        return self.fn / total if total else None

    @property
    def p_fp(self) -> Optional[float]:
        total = self.fp + self.tn
        return self.fp / total if total else None

    @property
    def p_tn(self) -> Optional[float]:
        total = self.fp + self.tn
        return self.tn / total if total else None

    def p_tp_exact(self) -> Optional[Fraction]:
        total = self.tp + self.fn
        return Fraction(self.tp, total) if total else None

    def p_fn_exact(self) -> Optional[Fraction]:
        total = self.tp + self.fn
        return Fraction(self.fn, total) if total else None

    def p_fp_exact(self) -> Optional[Fraction]:
        total = self.fp + self.tn
        return Fraction(self.fp, total) if total else None

    def p_tn_exact(self) -> Optional[Fraction]:
        total = self.fp + self.tn
        return Fraction(self.tn, total) if total else None

    @property
    def scalar(self) -> float:
        """Detection-rate reduction of the tuple; falls back to 1 - p_fp
        when the observed traffic contained no attack windows."""
        if self.tp + self.fn:
            return self.tp / (self.tp + self.fn)
        if self.fp + self.tn:
            return 1.0 - self.fp / (self.fp + self.tn)
        return 1.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "p_tp": self.p_tp,
            "p_fp": self.p_fp,
            "p_tn": self.p_tn,
            "p_fn": self.p_fn,
            "scalar": self.scalar,
        }


def merge_profiles(a: SecurityProfile, b: SecurityProfile) -> SecurityProfile:
    """Sum raw counts; rates are recomputed from the merged counts."""
    return SecurityProfile(
        tp=a.tp + b.tp, fp=a.fp + b.fp, tn=a.tn + b.tn, fn=a.fn + b.fn
    )


def _local_hurst(counts: np.ndarray, end: int) -> Optional[float]:
    start = max(0, end - _HURST_CONTEXT)
    ctx = counts[start:end].astype(np.float64)
    if ctx.size < _MIN_HURST_CONTEXT or np.var(ctx) == 0:
        return None
    try:
        return _aggregated_variance_hurst(ctx, drop_edges=0)
    except DegenerateTraceError:
        return None


def detect(
    trace: TrafficTrace, cfg: DetectorConfig = DetectorConfig()
) -> tuple[np.ndarray, SecurityProfile]:
    """Flag sliding windows as attack and tally the confusion matrix.

    A window is flagged when its mean rate exceeds the trailing robust
    baseline by more than ``rate_z_threshold`` MAD-normalized units, or the
    local Hurst estimate shifts from the global one by more than
    ``hurst_shift_threshold``. Ground truth for a window is attack when
    more than half of its slots are labeled attack.
    """
    n = len(trace)
    if n < cfg.window:
        raise DetectionError(f"trace of length {n} shorter than window {cfg.window}")
    counts = trace.counts.astype(np.float64)
    labels = trace.labels

    try:
        global_h: Optional[float] = (
            _aggregated_variance_hurst(counts, drop_edges=0)
            if np.var(counts) > 0 and n >= _MIN_HURST_CONTEXT
            else None
        )
    except DegenerateTraceError:
        global_h = None

    starts = np.arange(0, n - cfg.window + 1, cfg.stride)
    means = np.array(
        [counts[s : s + cfg.window].mean() for s in starts], dtype=np.float64
    )
    flags = np.zeros(starts.size, dtype=bool)
    tp = fp = tn = fn = 0
    for i, start in enumerate(starts):
        flagged = False
        base = means[max(0, i - _BASELINE_CAP) : i]
        if base.size >= _MIN_BASELINE and np.isfinite(cfg.rate_z_threshold):
            med = float(np.median(base))
            mad = float(np.median(np.abs(base - med)))
            scale = 1.4826 * mad + 1e-9
            if (means[i] - med) / scale > cfg.rate_z_threshold:
                flagged = True
        if not flagged and global_h is not None and np.isfinite(
            cfg.hurst_shift_threshold
        ):
            local_h = _local_hurst(counts, int(start) + cfg.window)
            if (
                local_h is not None
                and abs(local_h - global_h) > cfg.hurst_shift_threshold
            ):
                flagged = True
        flags[i] = flagged
        truth = (
            int(np.count_nonzero(labels[start : start + cfg.window]))
            > cfg.window // 2
        )
        if truth and flagged:
            tp += 1
        elif truth and not flagged:
            fn += 1
        elif not truth and flagged:
            fp += 1
        else:
            tn += 1
    return flags, SecurityProfile(tp=tp, fp=fp, tn=tn, fn=fn)
