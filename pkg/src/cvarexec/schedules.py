"""Optimized deterministic benchmarks: exponential decay and straight-line (VWAP) schedules.

A deterministic schedule has normally distributed shortfall, so its CVaR is
mean + std * kappa(q) / q and the optimal time scale has a closed form.
"""

from dataclasses import dataclass

import numpy as np

from .phi import default_table
from .risk import kappa

__all__ = [
    "DeterministicSchedule",
    "exp_optimal",
    "vwap_optimal",
    "det_mean_var",
    "det_cvar",
    "ratios",
    "UPS_EXP_VWAP",
]

UPS_EXP_VWAP = (4.0 / 3.0) ** (1.0 / 3.0) - 1.0


@dataclass(frozen=True)
class DeterministicSchedule:
    kind: str  # "exponential" or "vwap"
    scale: float  # tau (exponential) or horizon T (vwap), minutes
    initial_x: float

    def __post_init__(self):
        if self.kind not in ("exponential", "vwap"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def position(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return self.initial_x * np.exp(-t / self.scale)
        return self.initial_x * np.clip(1.0 - t / self.scale, 0.0, None)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return self.initial_x / self.scale * np.exp(-t / self.scale)
        return np.where(t < self.scale, self.initial_x / self.scale, 0.0)


def _check(x, q):
    if x == 0:
        raise ValueError("x must be nonzero")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")


def _scale(p):
    return p.sigma ** (2 / 3) * p.eta ** (1 / 3)


def exp_optimal(x, q, p):
    """Best exponential schedule for CVaR level q; returns (schedule, scvar)."""
    _check(x, q)
    k = kappa(q)
    tau = (p.eta * abs(x) * q / (np.sqrt(2.0) * p.sigma * k)) ** (2 / 3)
    v = 3.0 / 2.0 ** (5 / 3) * _scale(p) * abs(x) ** (4 / 3) * q ** (1 / 3) * k ** (2 / 3)
    return DeterministicSchedule("exponential", tau, x), v


def vwap_optimal(x, q, p):
    """Best constant-rate schedule for CVaR level q; returns (schedule, scvar)."""
    _check(x, q)
    k = kappa(q)
    T = (np.sqrt(3.0) * p.eta * abs(x) * q / (p.sigma * k)) ** (2 / 3)
    v = 3.0 ** (2 / 3) / 2.0 * _scale(p) * abs(x) ** (4 / 3) * q ** (1 / 3) * k ** (2 / 3)
    return DeterministicSchedule("vwap", T, x), v


def det_mean_var(schedule, p):
    """Mean and variance (bp, bp^2) of the shortfall of a deterministic schedule."""
    x, s = schedule.initial_x, schedule.scale
    if schedule.kind == "exponential":
        return p.eta * x * x / (4.0 * s), p.sigma**2 * x * x * s / 2.0
    return p.eta * x * x / (2.0 * s), p.sigma**2 * x * x * s / 3.0


def det_cvar(schedule, p, q):
    mean, var = det_mean_var(schedule, p)
    return mean + np.sqrt(var) * kappa(q) / q


def ratios(q, table=None):
    """(opt vs exp, opt vs vwap, exp vs vwap) relative CVaR improvements at level q."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    base = q ** (1 / 3) * kappa(q) ** (2 / 3) / (table or default_table())(q)
    return (1.5 ** (1 / 3) * base - 1.0, 2.0 ** (1 / 3) * base - 1.0, UPS_EXP_VWAP)
