"""Shared numerics helpers: RNG substreams and online statistics."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator derived deterministically from an integer path.

    Identical ``(seed, *path)`` always yields an identical stream, which is
    what makes per-sample reproducibility and fine/coarse coupling work.
    """
    if seed < 0 or any(p < 0 for p in path):
        raise ValueError("substream path entries must be non-negative")
    return np.random.default_rng([int(seed), *[int(p) for p in path]])


class OnlineStats:
    """Single-pass mean/variance accumulator (Welford)."""

    __slots__ = ("n", "mean", "_m2")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self._m2 += d * (x - self.mean)

    @property
    def var(self) -> float:
        """Unbiased sample variance; zero until two samples are seen."""
        if self.n < 2:
            return 0.0
        return self._m2 / (self.n - 1)

    def merge(self, other: "OnlineStats") -> None:
        if other.n == 0:
            return
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self._m2 += other._m2 + d * d * self.n * other.n / n
        self.n = n


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log(y) against log(x).

    Entries with non-positive y are dropped; at least two points must
    survive.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        raise ValueError("need at least two positive values for a log-log fit")
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)
