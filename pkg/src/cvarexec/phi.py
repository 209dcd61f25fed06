"""The Emden-Fowler profile phi(q): phi^2 phi'' = -q on (0, 1), phi(0) = phi(1) = 0.

phi is known in parametric form along two Bessel branches that meet at an
interior junction point (q_c, phi_c):

    left   (0 < q <= q_c):  Z = Z_L = -(2/pi) K_{1/3},     theta in (0, inf)
    right  (q_c <= q < 1):  Z = Z_R = sqrt(3) J_{1/3} - Y_{1/3}, theta in (0, theta_bar]

    q(theta)   = a theta^{-2/3} [(theta Z' + Z/3)^2 + s theta^2 Z^2]
    phi(theta) = b theta^{2/3} Z^2

with s = -1 on the left and s = +1 on the right. The curve is tabulated once
and evaluated by cubic Hermite interpolation using the exact parametric slopes
dphi/dq = phi'(theta) / q'(theta).
"""

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from .special import z_left, z_right

__all__ = [
    "PhiConstants",
    "PhiTable",
    "MonotonicityError",
    "OracleError",
    "compute_constants",
    "param_left",
    "param_right",
    "phi_exact",
    "build_phi_table",
    "default_table",
    "phi",
    "phi_over_q",
    "phi_sq_over_q",
    "ef_residual",
    "phi_ode_oracle",
    "shoot_bvp",
]

THETA_MIN = 1e-6
THETA_MAX = 40.0
# right-branch knots stop where 1 - q drops below this; beyond it the
# boundary asymptote phi ~ c (1 - q)^{2/3} takes over
RIGHT_TAIL = 1e-7
# knots closer than this, relative to their distance from the nearer
# boundary, are thinned out of the merged grid
MIN_GAP = 1e-9

LEFT, RIGHT = 0, 1


class MonotonicityError(RuntimeError):
    pass


class OracleError(RuntimeError):
    pass


class PhiConstants(NamedTuple):
    theta_bar: float
    a: float
    b: float
    junction_q: float
    junction_phi: float
    junction_slope: float


def compute_constants(bracket=(0.1, 3.0)) -> PhiConstants:
    """theta_bar = first zero of Z_R, the scale constants a, b and the junction point."""
    lo, hi = bracket
    if not 0.0 < lo < hi:
        raise ValueError(f"invalid bracket {bracket}")
    f = lambda t: z_right(t).value
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0.0:
        raise ValueError(
            f"Z_R root not bracketed on [{lo}, {hi}]: Z_R = {flo:.3g}, {fhi:.3g}"
        )
    tb = optimize.bisect(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    dz = z_right(tb).derivative
    a = 1.0 / (tb ** (4.0 / 3.0) * dz * dz)
    # b/a = (2/9)^{1/3} puts the boundary coefficient -(9/2)(b/a)^3 at -1,
    # i.e. phi^2 phi'' = -q exactly
    b = a * (2.0 / 9.0) ** (1.0 / 3.0)
    g13, g23 = math.gamma(1.0 / 3.0), math.gamma(2.0 / 3.0)
    qc = 2.0 ** (10.0 / 3.0) * a / (3.0 * g13**2)
    fc = 2.0 ** (8.0 / 3.0) * b / (3.0 * g23**2)
    slope = 3.0 * 2.0 ** (1.0 / 3.0) * b * g23 / (a * g13)
    return PhiConstants(tb, a, b, qc, fc, slope)


@lru_cache(maxsize=1)
def _constants():
    return compute_constants()


def _branch(theta, side, c):
    """(q, phi, dq/dtheta, dphi/dtheta) along one branch."""
    t = np.asarray(theta, dtype=float)
    z = z_left(t) if side == LEFT else z_right(t)
    s = -1.0 if side == LEFT else 1.0
    Z, Zp = np.asarray(z.value), np.asarray(z.derivative)
    U = t * Zp + Z / 3.0
    # from the Bessel equation t^2 Z'' + t Z' + (s t^2 - 1/9) Z = 0
    Up = Zp / 3.0 - (s * t - 1.0 / (9.0 * t)) * Z
    B = U * U + s * t * t * Z * Z
    Bp = 2.0 * U * Up + s * (2.0 * t * Z * Z + 2.0 * t * t * Z * Zp)
    t23 = t ** (-2.0 / 3.0)
    q = c.a * t23 * B
    dq = c.a * t23 * (Bp - 2.0 * B / (3.0 * t))
    p = c.b * t ** (2.0 / 3.0) * Z * Z
    dp = c.b * t ** (2.0 / 3.0) * (2.0 * Z * Z / (3.0 * t) + 2.0 * Z * Zp)
    return q, p, dq, dp


def _pair(q, p):
    if np.ndim(q) == 0:
        return float(q), float(p)
    return q, p


def param_left(theta, constants=None):
    """Point (q, phi) on the left branch, theta > 0."""
    q, p, _, _ = _branch(theta, LEFT, constants or _constants())
    return _pair(q, p)


def param_right(theta, constants=None):
    """Point (q, phi) on the right branch, 0 < theta <= theta_bar."""
    c = constants or _constants()
    if np.any(np.asarray(theta) > c.theta_bar * (1.0 + 1e-12)):
        raise ValueError(f"right branch is defined for theta <= {c.theta_bar}")
    q, p, _, _ = _branch(theta, RIGHT, c)
    return _pair(q, p)


def phi_exact(q, constants=None):
    """phi(q) by root-finding the branch parameter; slow, used for anchors and checks."""
    c = constants or _constants()
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q in (0.0, 1.0):
        return 0.0
    if q == c.junction_q:
        return c.junction_phi
    side = LEFT if q < c.junction_q else RIGHT
    g = lambda t: float(_branch(t, side, c)[0]) - q
    if side == LEFT:
        lo, hi = 1e-12, THETA_MAX
    else:
        lo, hi = 1e-12, c.theta_bar
    if g(lo) * g(hi) > 0.0:
        raise ValueError(f"q = {q} is outside the resolvable range of the {('left', 'right')[side]} branch")
    t = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(_branch(t, side, c)[1])


class PhiTable:
    """Tabulated phi on a strictly increasing q grid with exact knot slopes.

    ``knots[0] = 0``, ``knots[-1] = 1``, the junction is an interior knot.
    Outside the first/last interior knot the table switches to boundary
    asymptotes: phi/q held constant near 0 and phi proportional to
    (1 - q)^{2/3} near 1.
    """

    def __init__(self, constants, knots, values, slopes, branch, theta):
        self.constants = constants
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self.branch = np.asarray(branch, dtype=np.int8)
        self.theta = np.asarray(theta, dtype=float)
        for arr in (self.knots, self.values, self.slopes, self.branch, self.theta):
            arr.setflags(write=False)

    def __len__(self):
        return self.knots.size

    @property
    def q_lo(self):
        return self.knots[1]

    @property
    def q_hi(self):
        return self.knots[-2]

    def _interior(self, q):
        k, y, d = self.knots, self.values, self.slopes
        i = np.clip(np.searchsorted(k, q, side="right") - 1, 1, k.size - 3)
        h = k[i + 1] - k[i]
        t = (q - k[i]) / h
        t2, t3 = t * t, t * t * t
        return (
            (2 * t3 - 3 * t2 + 1) * y[i]
            + (t3 - 2 * t2 + t) * h * d[i]
            + (-2 * t3 + 3 * t2) * y[i + 1]
            + (t3 - t2) * h * d[i + 1]
        )

    def __call__(self, q):
        q = _check_q(q)
        scalar = q.ndim == 0
        q = np.atleast_1d(q)
        out = np.empty_like(q)
        lo = q < self.q_lo
        hi = q > self.q_hi
        mid = ~(lo | hi)
        if np.any(mid):
            out[mid] = self._interior(q[mid])
        if np.any(lo):
            out[lo] = q[lo] * (self.values[1] / self.knots[1])
        if np.any(hi):
            s_last = 1.0 - self.knots[-2]
            out[hi] = self.values[-2] * ((1.0 - q[hi]) / s_last) ** (2.0 / 3.0)
        return float(out[0]) if scalar else out

    def rows(self):
        """(q, phi, theta, branch) rows; theta is nan at the two boundary knots."""
        names = np.array(["left", "right"])
        return [
            (float(q), float(p), float(t), str(names[b]))
            for q, p, t, b in zip(self.knots, self.values, self.theta, self.branch)
        ]


def _check_q(q, positive=False):
    q = np.asarray(q, dtype=float)
    if np.any(~((q >= 0.0) & (q <= 1.0))):
        raise ValueError("q must lie in [0, 1]")
    if positive and np.any(q == 0.0):
        raise ValueError("q must be positive")
    return q


def _assert_monotone(theta, q, name, increasing):
    dq = np.diff(q)
    bad = np.flatnonzero(dq <= 0.0) if increasing else np.flatnonzero(dq >= 0.0)
    if bad.size:
        i = bad[0]
        raise MonotonicityError(
            f"{name} branch: q(theta) not strictly monotone on theta in "
            f"[{theta[i]:.6g}, {theta[i + 1]:.6g}] (q = {q[i]:.12g} -> {q[i + 1]:.12g})"
        )


def _theta_grids(c, n_left, n_right):
    # theta >= 1 is where q decays like exp(-2 theta); it gets most of the knots
    nl = n_left // 4
    left = np.unique(np.concatenate([
        np.geomspace(THETA_MIN, 1.0, nl),
        np.linspace(1.0, THETA_MAX, n_left - nl + 1),
    ]))
    # right: log-spaced near 0, then log-spaced in the distance to theta_bar
    # so that 1 - q ~ (theta_bar - theta)^3 is resolved geometrically
    nr = n_right // 4
    t_mid = 0.5
    dmin = 1e-3
    right = np.unique(np.concatenate([
        np.geomspace(THETA_MIN, t_mid, nr),
        c.theta_bar - np.geomspace(c.theta_bar - t_mid, dmin, n_right - nr + 1),
    ]))
    return left, right


def build_phi_table(n_left=2048, n_right=2048, constants=None) -> PhiTable:
    """Sample both parametric branches and merge them into one q grid."""
    if n_left < 64 or n_right < 64:
        raise ValueError("n_left and n_right must be at least 64")
    c = constants or _constants()
    tl, tr = _theta_grids(c, n_left, n_right)

    ql, pl, dql, dpl = _branch(tl, LEFT, c)
    qr, pr, dqr, dpr = _branch(tr, RIGHT, c)
    _assert_monotone(tl, ql, "left", increasing=False)
    _assert_monotone(tr, qr, "right", increasing=True)

    keep = 1.0 - qr >= RIGHT_TAIL
    tr, qr, pr, dqr, dpr = tr[keep], qr[keep], pr[keep], dqr[keep], dpr[keep]
    keep = (ql > 0.0) & (pl > 0.0)
    tl, ql, pl, dql, dpl = tl[keep], ql[keep], pl[keep], dql[keep], dpl[keep]

    # left branch runs backwards in q
    q = np.concatenate([[0.0], ql[::-1], [c.junction_q], qr, [1.0]])
    p = np.concatenate([[0.0], pl[::-1], [c.junction_phi], pr, [0.0]])
    d = np.concatenate([[np.nan], (dpl / dql)[::-1], [c.junction_slope], dpr / dqr, [np.nan]])
    br = np.concatenate([[LEFT], np.full(ql.size, LEFT), [LEFT], np.full(qr.size, RIGHT), [RIGHT]])
    th = np.concatenate([[np.nan], tl[::-1], [0.0], tr, [np.nan]])

    # drop branch knots crowding the junction or each other
    keep = np.ones(q.size, dtype=bool)
    jc, end = ql.size + 1, q.size - 1
    prev = 0
    for i in range(1, end):
        if i == jc:
            prev = i
            continue
        nxt = jc if i < jc else end
        gap = MIN_GAP * min(q[i], 1.0 - q[i])
        if q[i] - q[prev] >= gap and q[nxt] - q[i] >= gap:
            prev = i
        else:
            keep[i] = False
    q, p, d, br, th = q[keep], p[keep], d[keep], br[keep], th[keep]
    if np.any(np.diff(q) <= 0.0):
        i = int(np.flatnonzero(np.diff(q) <= 0.0)[0])
        raise MonotonicityError(f"merged grid not increasing at q = {q[i]:.12g}")

    d = _limit_slopes(q, p, d)
    return PhiTable(c, q, p, d, br, th)


def _limit_slopes(q, p, d):
    """Fritsch-Carlson safeguard on segments where phi is monotone.

    With exact slopes the limiter is essentially inactive; it only guards
    against overshoot if a coarse grid is requested.
    """
    d = d.copy()
    delta = np.diff(p) / np.diff(q)
    for i in range(1, q.size - 2):
        dk = delta[i]
        if dk == 0.0 or d[i] * dk <= 0.0 or d[i + 1] * dk <= 0.0:
            continue
        al, be = d[i] / dk, d[i + 1] / dk
        r = al * al + be * be
        if r > 9.0:
            tau = 3.0 / math.sqrt(r)
            d[i], d[i + 1] = tau * al * dk, tau * be * dk
    return d


@lru_cache(maxsize=1)
def default_table() -> PhiTable:
    return build_phi_table()


def phi(q, table=None):
    return (table or default_table())(q)


def phi_over_q(q, table=None):
    q = _check_q(q, positive=True)
    return phi(q, table) / q


def phi_sq_over_q(q, table=None):
    q = _check_q(q, positive=True)
    v = phi(q, table)
    return v * v / q


def ef_residual(q, table=None, h=1e-4):
    """|phi'' phi^2 + q| with a five-point stencil of step min(h, q/16, (1-q)/16).

    The step shrinks near the ends so the stencil resolves the (1-q)^{2/3}
    corner; nan where the stencil leaves the interpolated interior.
    """
    t = table or default_table()
    q = np.asarray(_check_q(q), dtype=float)
    hh = np.minimum(h, np.minimum(q, 1.0 - q) / 16.0)
    ok = (q - 2 * hh >= t.q_lo) & (q + 2 * hh <= t.q_hi) & (hh > 0)
    qs = np.where(ok, q, 0.5)
    hs = np.where(ok, hh, h)
    d2 = (-t(qs + 2 * hs) + 16 * t(qs + hs) - 30 * t(qs) + 16 * t(qs - hs) - t(qs - 2 * hs)) / (12 * hs * hs)
    r = np.where(ok, np.abs(d2 * t(qs) ** 2 + qs), np.nan)
    return float(r) if r.ndim == 0 else r


def _rhs(q, y):
    return [y[1], -q / (y[0] * y[0])]


def _hit_zero(q, y):
    return y[0]


_hit_zero.terminal = True
_hit_zero.direction = -1


def shoot_bvp(delta=1e-2, rtol=1e-12, atol=1e-14, max_bisect=200):
    """Solve phi'' = -q/phi^2 on [delta, 1 - delta] by shooting on phi'(delta).

    Boundary values come from ``phi_exact`` at the two ends only. Returns the
    dense ``solve_ivp`` solution of the converged shot.
    """
    if not 0.0 < delta <= 0.01:
        raise ValueError("delta must lie in (0, 0.01]")
    q0, q1 = delta, 1.0 - delta
    y0, y1 = phi_exact(q0), phi_exact(q1)

    def shoot(slope):
        sol = solve_ivp(_rhs, (q0, q1), [y0, slope], method="DOP853", rtol=rtol,
                        atol=atol, events=_hit_zero, dense_output=True)
        if sol.status == 1:
            return -np.inf, sol
        return sol.y[0, -1] - y1, sol

    lo, hi = 0.0, 1.0
    while shoot(hi)[0] < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise OracleError("could not bracket the initial slope")
    sol = None
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        err, sol = shoot(mid)
        if err == 0.0 or hi - lo <= 2e-16 * hi:
            return sol
        if err < 0.0:
            lo = mid
        else:
            hi = mid
        if abs(err) < 1e-14:
            return sol
    raise OracleError(f"shooting did not converge after {max_bisect} bisections")


def phi_ode_oracle(grid, delta=1e-2):
    """phi on ``grid`` (inside [delta, 1 - delta]) from the shooting solution."""
    grid = np.asarray(grid, dtype=float)
    if np.any((grid < delta) | (grid > 1.0 - delta)):
        raise ValueError("grid must lie within [delta, 1 - delta]")
    sol = shoot_bvp(delta)
    return sol.sol(grid)[0]
