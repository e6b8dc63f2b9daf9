"""Core trace types and CSV serialization."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMAL = 0
ATTACK = 1


class TraceError(ValueError):
    """Invalid trace or trace-spec input."""


@dataclass(frozen=True)
class TraceSpec:
    """Parameters for one synthetic packet-count trace.

    ``cascade_weight`` absent (None) means a plain self-similar (fGn)
    trace; a value in [0.5, 1) switches on the multiplicative cascade.
    """

    length: int
    target_hurst: float
    mean_rate: float
    std_rate: float = 0.0
    cascade_weight: Optional[float] = None
    tick_ms: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.length < 2 ** 10 or (self.length & (self.length - 1)) != 0:
            raise TraceError(
                f"length must be a power of two >= 1024, got {self.length}"
            )
        if not (0.0 < self.target_hurst < 1.0):
            raise TraceError(f"target_hurst must be in (0,1), got {self.target_hurst}")
        if self.mean_rate <= 0:
            raise TraceError(f"mean_rate must be > 0, got {self.mean_rate}")
        if self.std_rate < 0:
            raise TraceError(f"std_rate must be >= 0, got {self.std_rate}")
        if self.cascade_weight is not None and not (0.5 <= self.cascade_weight < 1.0):
            raise TraceError(
                f"cascade_weight must be in [0.5, 1), got {self.cascade_weight}"
            )
        if self.tick_ms <= 0:
            raise TraceError("tick_ms must be > 0")

    @property
    def depth(self) -> int:
        return int(math.log2(self.length))

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "target_hurst": self.target_hurst,
            "mean_rate": self.mean_rate,
            "std_rate": self.std_rate,
            "cascade_weight": self.cascade_weight,
            "tick_ms": self.tick_ms,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        return cls(
            length=int(d["length"]),
            target_hurst=float(d["target_hurst"]),
            mean_rate=float(d["mean_rate"]),
            std_rate=float(d.get("std_rate", 0.0)),
            cascade_weight=(
                None if d.get("cascade_weight") is None else float(d["cascade_weight"])
            ),
            tick_ms=float(d.get("tick_ms", 1.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class TrafficTrace:
    """Per-slot packet counts with ground-truth attack labels."""

    counts: np.ndarray
    labels: np.ndarray
    tick_ms: float = 1.0
    spec: Optional[TraceSpec] = None

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.counts.shape != self.labels.shape:
            raise TraceError("counts and labels must have equal length")
        if self.counts.ndim != 1:
            raise TraceError("trace must be one-dimensional")
        if np.any(self.counts < 0):
            raise TraceError("counts must be non-negative")

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    def copy(self) -> "TrafficTrace":
        return TrafficTrace(
            counts=self.counts.copy(),
            labels=self.labels.copy(),
            tick_ms=self.tick_ms,
            spec=self.spec,
        )


@dataclass(frozen=True)
class AttackSpec:
    """Labeled volumetric attack bursts to superimpose on a trace.

    Windows are half-open ``[start, end)`` slot ranges.
    """

    windows: Sequence[tuple[int, int]] = field(default_factory=tuple)
    intensity_multiplier: float = 10.0

    def __post_init__(self) -> None:
        if self.intensity_multiplier <= 1.0:
            raise TraceError("intensity_multiplier must be > 1")
        wins = sorted(tuple(w) for w in self.windows)
        for start, end in wins:
            if start >= end:
                raise TraceError(f"window start must precede end: ({start}, {end})")
            if start < 0:
                raise TraceError("window start must be >= 0")
        for (s0, e0), (s1, e1) in zip(wins, wins[1:]):
            if s1 < e0:
                raise TraceError(f"overlapping attack windows: ({s0},{e0}) ({s1},{e1})")
        object.__setattr__(self, "windows", tuple(wins))

    def to_dict(self) -> dict:
        return {
            "windows": [list(w) for w in self.windows],
            "intensity_multiplier": self.intensity_multiplier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        return cls(
            windows=[tuple(w) for w in d.get("windows", [])],
            intensity_multiplier=float(d.get("intensity_multiplier", 10.0)),
        )


def write_trace_csv(trace: TrafficTrace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "count", "label"])
        for slot, (count, label) in enumerate(zip(trace.counts, trace.labels)):
            writer.writerow([slot, int(count), int(label)])


def read_trace_csv(path: str, tick_ms: float = 1.0) -> TrafficTrace:
    counts: list[int] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slot", "count", "label"]:
            raise TraceError(f"bad trace CSV header in {path}: {header}")
        for row in reader:
            counts.append(int(row[1]))
            labels.append(int(row[2]))
    return TrafficTrace(
        counts=np.asarray(counts), labels=np.asarray(labels), tick_ms=tick_ms
    )
