"""Synthetic self-similar / multifractal traffic generation."""
from __future__ import annotations

import numpy as np

from .trace import ATTACK, AttackSpec, TraceError, TrafficTrace, TraceSpec


class GeneratorError(RuntimeError):
    """The spectral embedding failed (negative eigenvalue)."""


def _fgn_standard(n: int, hurst: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance fractional Gaussian noise via circulant embedding.

    Davies-Harte construction: embed the fGn autocovariance in a circulant
    matrix of size 2n, diagonalize with the FFT and color white noise.
    Exact covariance, O(n log n).
    """
    if hurst == 0.5:
        return rng.standard_normal(n)
    k = np.arange(n + 1, dtype=np.float64)
    acov = 0.5 * (
        np.abs(k + 1) ** (2 * hurst)
        - 2 * np.abs(k) ** (2 * hurst)
        + np.abs(k - 1) ** (2 * hurst)
    )
    # First row of the 2n circulant embedding.
    row = np.concatenate([acov, acov[-2:0:-1]])
    m = 2 * n
    eigs = np.fft.fft(row).real
    if np.any(eigs < -1e-8):
        raise GeneratorError(
            f"circulant embedding produced negative eigenvalue "
            f"(min {eigs.min():.3e}) for n={n}, H={hurst}"
        )
    eigs = np.clip(eigs, 0.0, None)
    # Color complex white noise by sqrt(eig/m); the real part of the FFT
    # then carries exactly the embedded covariance.
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    coloured = np.fft.fft(z * np.sqrt(eigs / m))
    return coloured.real[:n]


def _cascade_weights(depth: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Conservative binomial cascade: masses of the 2**depth finest cells.

    At each split one child receives fraction p and the other 1-p, with the
    assignment chosen uniformly at random. Total mass is exactly 1.
    """
    masses = np.ones(1, dtype=np.float64)
    for _ in range(depth):
        flip = rng.random(masses.size) < 0.5
        left = np.where(flip, p, 1.0 - p)
        masses = np.column_stack([masses * left, masses * (1.0 - left)]).ravel()
    return masses


def _finish_counts(rates: np.ndarray, tick_ms: float, spec: TraceSpec) -> TrafficTrace:
    counts = np.rint(np.clip(rates, 0.0, None)).astype(np.int64)
    labels = np.zeros(counts.shape[0], dtype=np.int8)
    return TrafficTrace(counts=counts, labels=labels, tick_ms=tick_ms, spec=spec)


def generate_fgn_trace(spec: TraceSpec) -> TrafficTrace:
    """Monofractal packet-count trace: shifted/scaled fGn, rounded, clipped."""
    if spec.cascade_weight is not None:
        raise TraceError("cascade_weight must be absent for an fGn trace")
    rng = np.random.default_rng(spec.seed)
    noise = _fgn_standard(spec.length, spec.target_hurst, rng)
    rates = spec.mean_rate + spec.std_rate * noise
    return _finish_counts(rates, spec.tick_ms, spec)


def generate_cascade_trace(spec: TraceSpec) -> TrafficTrace:
    """Multifractal trace: conservative binomial cascade modulating fGn.

    cascade_weight p = 0.5 degenerates exactly to the fGn trace for the
    same spec; larger p yields a larger h(q) range.
    """
    if spec.cascade_weight is None:
        raise TraceError("cascade_weight required for a cascade trace")
    rng = np.random.default_rng(spec.seed)
    noise = _fgn_standard(spec.length, spec.target_hurst, rng)
    # Product of two independent cascades doubles the intermittency per
    # weight p; renormalized so total mass stays exactly 1. At p = 0.5 both
    # factors are uniform and the product is exact, so the fGn degeneracy
    # is preserved.
    weights = _cascade_weights(spec.depth, spec.cascade_weight, rng)
    weights = weights * _cascade_weights(spec.depth, spec.cascade_weight, rng)
    weights = weights / weights.sum()
    # Mass-preserving modulation: cell mass scales the local mean rate.
    rates = spec.length * weights * (spec.mean_rate + spec.std_rate * noise)
    return _finish_counts(rates, spec.tick_ms, spec)


def generate_trace(spec: TraceSpec) -> TrafficTrace:
    """Dispatch on cascade_weight presence."""
    if spec.cascade_weight is None:
        return generate_fgn_trace(spec)
    return generate_cascade_trace(spec)


def inject_attacks(trace: TrafficTrace, atk: AttackSpec) -> TrafficTrace:
    """Multiply counts by the attack intensity inside each labeled window.

    Slots outside the windows are bit-identical to the input.
    """
    n = len(trace)
    for start, end in atk.windows:
        if end > n:
            raise TraceError(f"attack window ({start},{end}) exceeds trace length {n}")
    out = trace.copy()
    for start, end in atk.windows:
        out.counts[start:end] = np.rint(
            out.counts[start:end] * atk.intensity_multiplier
        ).astype(np.int64)
        out.labels[start:end] = ATTACK
    return out
