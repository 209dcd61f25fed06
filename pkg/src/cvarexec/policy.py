"""Closed-form value function and optimal feedback policies on the (x, q) state space.

With V(x, q) = (3/4)^{2/3} sigma^{2/3} eta^{1/3} |x|^{4/3} phi(q) the trader
liquidates at f* = V_x / (eta q) and the adversary diffuses the quantile at
g* = sigma x / V_qq. Cube roots of negative positions follow x^{1/3} = -|x|^{1/3}.
"""

from dataclasses import dataclass

import numpy as np

from .phi import default_table

__all__ = [
    "MarketParams",
    "AugmentedState",
    "TruncationIndex",
    "value_function",
    "f_star",
    "g_star",
    "f_n",
    "g_n",
    "in_region",
    "hjb_residual",
    "phi_second_derivative",
]

_V = (3.0 / 4.0) ** (2.0 / 3.0)
_F = (3.0 / 4.0) ** (-1.0 / 3.0)
_G = (3.0 / 4.0) ** (-2.0 / 3.0)


@dataclass(frozen=True)
class MarketParams:
    sigma: float  # bp / sqrt(min)
    eta: float  # bp * min / unit^2
    position_bound_M: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "eta", "position_bound_M"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class AugmentedState:
    x: float
    q: float

    def __post_init__(self):
        if not np.isfinite(self.x):
            raise ValueError(f"x must be finite, got {self.x}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")

    def check(self, p: MarketParams):
        if abs(self.x) > p.position_bound_M:
            raise ValueError(f"|x| = {abs(self.x)} exceeds position bound {p.position_bound_M}")
        return self


@dataclass(frozen=True)
class TruncationIndex:
    """Region A_n = {|x| > 1/n, 1/n < q < 1 - 1/n}."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    @classmethod
    def for_state(cls, x0, q0):
        """Smallest n whose region strictly contains (x0, q0)."""
        bound = max(1.0 / abs(x0), 1.0 / q0, 1.0 / (1.0 - q0))
        return cls(int(np.floor(bound)) + 1)

    def admits(self, x0, q0):
        return self.n > max(1.0 / abs(x0), 1.0 / q0, 1.0 / (1.0 - q0))


def _cbrt(x):
    return np.cbrt(x)  # odd extension, matches x^{1/3} = -|x|^{1/3}


def _open_q(q):
    if not 0.0 < q < 1.0:
        raise ValueError(f"policy needs q in (0, 1), got {q}")


def value_function(s: AugmentedState, p: MarketParams, table=None):
    """Scaled CVaR of optimal execution from state s (bp)."""
    s.check(p)
    ph = (table or default_table())(s.q)
    return _V * p.sigma ** (2 / 3) * p.eta ** (1 / 3) * abs(s.x) ** (4 / 3) * ph


def f_star(s: AugmentedState, p: MarketParams, table=None):
    """Optimal liquidation rate (units/min)."""
    s.check(p)
    _open_q(s.q)
    ph = (table or default_table())(s.q)
    return _F * p.sigma ** (2 / 3) * p.eta ** (-2 / 3) * _cbrt(s.x) * ph / s.q


def g_star(s: AugmentedState, p: MarketParams, table=None):
    """Optimal quantile diffusion rate (1/sqrt(min)); negative for x > 0."""
    s.check(p)
    _open_q(s.q)
    if s.x == 0.0:
        raise ValueError("g* is undefined at x = 0")
    ph = (table or default_table())(s.q)
    return -_G * p.sigma ** (1 / 3) * p.eta ** (-1 / 3) / _cbrt(s.x) * ph * ph / s.q


def in_region(s: AugmentedState, trunc: TruncationIndex):
    n = trunc.n
    return abs(s.x) > 1.0 / n and 1.0 / n < s.q < 1.0 - 1.0 / n


def f_n(s: AugmentedState, p: MarketParams, trunc: TruncationIndex, table=None):
    """f* inside A_n, exponential decay x/n outside."""
    if in_region(s, trunc):
        return f_star(s, p, table)
    return s.x / trunc.n


def g_n(s: AugmentedState, p: MarketParams, trunc: TruncationIndex, table=None):
    """g* inside A_n, frozen quantile outside."""
    if in_region(s, trunc):
        return g_star(s, p, table)
    return 0.0


def phi_second_derivative(q, h=1e-4, table=None):
    """Five-point central difference of the tabulated phi."""
    t = table or default_table()
    q = np.asarray(q, dtype=float)
    if np.any((q - 2 * h < 0.0) | (q + 2 * h > 1.0)):
        raise ValueError("stencil leaves [0, 1]")
    return (-t(q + 2 * h) + 16 * t(q + h) - 30 * t(q) + 16 * t(q - h) - t(q - 2 * h)) / (12 * h * h)


def hjb_residual(s: AugmentedState, p: MarketParams, table=None, h=1e-4):
    """V_x^2 V_qq + sigma^2 eta x^2 q with V_qq from differencing the table."""
    s.check(p)
    _open_q(s.q)
    if s.x == 0.0:
        raise ValueError("residual is trivial at x = 0")
    t = table or default_table()
    ph = t(s.q)
    d2 = float(phi_second_derivative(s.q, h=min(h, s.q / 4, (1 - s.q) / 4), table=t))
    c = _V * p.sigma ** (2 / 3) * p.eta ** (1 / 3)
    vx = c * (4.0 / 3.0) * _cbrt(s.x) * ph
    vqq = c * abs(s.x) ** (4 / 3) * d2
    return vx * vx * vqq + p.sigma**2 * p.eta * s.x**2 * s.q
