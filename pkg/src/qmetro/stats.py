"""Estimators for correlated Markov-chain samples."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MIN_LENGTH = 100
WINDOW_C = 6.0


class SeriesError(ValueError):
    """The series is too short or not finite."""


def _as_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).ravel()
    if x.size < MIN_LENGTH:
        raise SeriesError(f"need at least {MIN_LENGTH} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise SeriesError("series contains non-finite values")
    return x


def autocorrelation_function(series) -> np.ndarray:
    """Normalized autocorrelation ``rho(t)`` for ``t = 0..N-1`` via FFT."""
    x = _as_series(series)
    y = x - x.mean()
    n = y.size
    size = 1 << (2 * n - 1).bit_length()
    transform = np.fft.rfft(y, size)
    acov = np.fft.irfft(transform * np.conj(transform), size)[:n] / n
    if acov[0] <= 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def integrated_autocorrelation(series, c: float = WINDOW_C) -> tuple[float, bool]:
    """Integrated autocorrelation time and a flag set for constant series.

    Uses the self-consistent window: the sum of ``rho(t)`` stops at the first
    lag ``W`` with ``W >= c * tau(W)``. The result is clipped below at 0.5.
    """
    x = _as_series(series)
    if np.ptp(x) == 0.0:
        return 0.5, True
    rho = autocorrelation_function(x)
    taus = 0.5 + np.cumsum(rho[1:])
    lags = np.arange(1, rho.size)
    hit = np.flatnonzero(lags >= c * taus)
    tau = taus[hit[0]] if hit.size else taus[-1]
    return max(0.5, float(tau)), False


def autocorrelation_time(series, c: float = WINDOW_C) -> float:
    return integrated_autocorrelation(series, c)[0]


@dataclass(frozen=True)
class EstimateReport:
    name: str
    mean: float
    stderr: float
    tau: float
    ess: float
    samples: int
    reference: float | None = None
    z: float | None = None
    constant: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def estimate(series, reference: float | None = None, name: str = "value") -> EstimateReport:
    """Mean with the ``sqrt(2 tau var / N)`` standard error and an optional z-score."""
    x = _as_series(series)
    tau, constant = integrated_autocorrelation(x)
    n = x.size
    mean = float(x.mean())
    stderr = 0.0 if constant else math.sqrt(2.0 * tau * float(x.var()) / n)
    z = None
    if reference is not None:
        diff = mean - reference
        if stderr > 0:
            z = diff / stderr
        else:
            z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return EstimateReport(name, mean, stderr, tau, n / (2.0 * tau), n, reference, z, constant)
