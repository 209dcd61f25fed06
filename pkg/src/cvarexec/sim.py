"""Monte Carlo of the execution game under common random numbers.

Every policy in a batch walks the same Brownian path: for path i the kernel
draws one normal per step from the (seed, i) stream and advances all still
active policies in lockstep. Adaptive policies use Euler steps

    X <- X - f(X, Q) dt,   Q <- clip(Q + g(X, Q) dW, eps, 1 - eps),

deterministic schedules use their exact positions, and every policy books
cost eta/2 pi^2 dt - sigma X dW.
"""

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .phi import default_table
from .policy import MarketParams
from .risk import empirical_cvar, empirical_var
from .rng import draw, new_stream, split_seed, zig_fast, zig_slow
from .schedules import DeterministicSchedule, exp_optimal, vwap_optimal

__all__ = [
    "SimConfig",
    "PathResult",
    "PathBatch",
    "ShortfallStats",
    "PathError",
    "Frontier",
    "parse_policy",
    "simulate_path",
    "simulate_batch",
    "aggregate",
    "frontier",
]

OPT, TRUNC, EXP, VWAP = 0, 1, 2, 3
_BUCKETS = 4096
_MAX_TRACE = 2000


class PathError(RuntimeError):
    def __init__(self, msg, path_index=None, policy=None, trace=None):
        super().__init__(msg)
        self.path_index = path_index
        self.policy = policy
        self.trace = trace


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 20_000
    master_seed: int = 20240607
    q_floor: float = 1e-5
    completion_threshold: float = 1e-2
    horizon_cap: float = 3900.0  # ten 390-minute trading days
    policy_set: tuple = ("opt", "exp", "vwap")
    workers: int = 1
    chunk: int = 64

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError("n_paths must be a positive integer")
        if not 0 < self.q_floor <= 0.01:
            raise ValueError("q_floor must lie in (0, 0.01]")
        if not self.completion_threshold > 0:
            raise ValueError("completion_threshold must be positive")
        if not self.horizon_cap > 0:
            raise ValueError("horizon_cap must be positive")
        if self.workers < 1 or self.chunk < 1:
            raise ValueError("workers and chunk must be positive")
        split_seed(self.master_seed)
        for p in self.policy_set:
            parse_policy(p)

    @property
    def max_steps(self):
        return int(round(self.horizon_cap / self.dt))


@dataclass
class PathResult:
    shortfall: float
    completion_time_50: float
    completion_time_95: float
    terminal_q: float
    capped: bool
    steps: int = 0
    trace: Optional[np.ndarray] = field(default=None, repr=False)  # rows (t, X, Q, C)


@dataclass
class PathBatch:
    """Per-path results of one policy, stored column-wise and ordered by path index."""

    policy: str
    shortfall: np.ndarray
    t50: np.ndarray
    t95: np.ndarray
    terminal_q: np.ndarray
    capped: np.ndarray
    steps: np.ndarray
    sum_ww: np.ndarray
    sum_wq: np.ndarray
    sum_qq: np.ndarray
    q_floor: float = 1e-5
    traces: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.shortfall.size

    def __getitem__(self, i):
        return PathResult(float(self.shortfall[i]), float(self.t50[i]), float(self.t95[i]),
                          float(self.terminal_q[i]), bool(self.capped[i]), int(self.steps[i]),
                          self.traces.get(int(i)))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def aim_correlation(self):
        """Pooled correlation of dW and dQ over all steps of all paths."""
        ww, wq, qq = self.sum_ww.sum(), self.sum_wq.sum(), self.sum_qq.sum()
        if qq == 0.0:
            return 0.0
        return float(wq / math.sqrt(ww * qq))


@dataclass(frozen=True)
class ShortfallStats:
    cvar: float
    var: float
    mean: float
    median: float
    std: float
    avg_time_50: float
    avg_time_95: float
    n: int
    mc_stderr_cvar: float
    capped_fraction: float = 0.0
    mean_terminal_q: float = float("nan")
    stderr_terminal_q: float = float("nan")
    upper_fraction: float = float("nan")
    lower_fraction: float = float("nan")


_TRUNC_RE = re.compile(r"^truncated\((\d+)\)$")


def parse_policy(pol):
    """Normalise a policy: 'opt', 'exp', 'vwap', 'truncated(n)' or a schedule."""
    if isinstance(pol, DeterministicSchedule):
        return pol
    if not isinstance(pol, str):
        raise ValueError(f"unknown policy {pol!r}")
    s = pol.strip().lower()
    if s in ("opt", "exp", "vwap"):
        return s
    m = _TRUNC_RE.match(s)
    if m and int(m.group(1)) >= 1:
        return s
    raise ValueError(f"unknown policy {pol!r}")


def _policy_name(pol):
    if isinstance(pol, DeterministicSchedule):
        return f"{pol.kind}(scale={pol.scale:.6g})"
    return parse_policy(pol)


def _encode(pol, x0, q0, p):
    """(kind, scale, n) for the kernel."""
    pol = parse_policy(pol)
    if isinstance(pol, DeterministicSchedule):
        if pol.initial_x != x0:
            raise ValueError("schedule initial_x differs from x0")
        return (EXP if pol.kind == "exponential" else VWAP), pol.scale, 0
    if pol in ("opt",) or pol.startswith("truncated"):
        if not 0.0 < q0 < 1.0:
            raise ValueError(f"adaptive policies need q0 in (0, 1), got {q0}")
        if pol == "opt":
            return OPT, 0.0, 0
        return TRUNC, 0.0, int(_TRUNC_RE.match(pol).group(1))
    if x0 == 0.0:
        # nothing to schedule; any positive scale completes immediately
        return (EXP if pol == "exp" else VWAP), 1.0, 0
    sched = (exp_optimal if pol == "exp" else vwap_optimal)(x0, q0, p)[0]
    return (EXP if pol == "exp" else VWAP), sched.scale, 0


def _table_arrays(table):
    """Knot arrays plus a search index for the kernel.

    ``index`` holds (lo, hi) knot brackets for 4096 uniform q buckets, then for
    the binades of q and of 1 - q below 2^-12 so the crowded boundary regions
    stay cheap to search.
    """
    k = np.ascontiguousarray(table.knots)
    v = np.ascontiguousarray(table.values)
    d = np.ascontiguousarray(table.slopes)
    n = k.size

    def brackets(lo_edges, hi_edges):
        lo = np.clip(np.searchsorted(k, lo_edges, side="right") - 1, 1, n - 3)
        hi = np.clip(np.searchsorted(k, hi_edges, side="right"), 2, n - 1)
        return np.stack([lo, hi], axis=1)

    u = np.arange(_BUCKETS) / _BUCKETS
    e = np.arange(-_EMIN, -11)  # binades [2^(e-1), 2^e)
    mid = brackets(u, u + 1.0 / _BUCKETS)
    low = brackets(np.ldexp(1.0, e - 1), np.ldexp(1.0, e))
    high = brackets(1.0 - np.ldexp(1.0, e), 1.0 - np.ldexp(1.0, e - 1))
    index = np.concatenate([mid, low, high]).astype(np.int64)
    return k, v, d, index


_EMIN = 1075


@njit(cache=True, nogil=True, _nrt=False)
def _phi_lookup(q, K, V, D, index):
    """Same Hermite evaluation as PhiTable, with bucketed binary search."""
    n = K.size
    if q < K[1]:
        return q * (V[1] / K[1])
    if q > K[n - 2]:
        return V[n - 2] * ((1.0 - q) / (1.0 - K[n - 2])) ** (2.0 / 3.0)
    if q < 0.000244140625:
        row = 4096 + math.frexp(q)[1] + 1075
    elif 1.0 - q < 0.000244140625:
        row = 4096 + 1064 + math.frexp(1.0 - q)[1] + 1075
    else:
        row = np.int64(q * 4096.0)
    lo = index[row, 0]
    hi = index[row, 1]
    # invariant K[lo] <= q < K[hi]
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if K[mid] <= q:
            lo = mid
        else:
            hi = mid
    i = min(lo, n - 3)
    h = K[i + 1] - K[i]
    t = (q - K[i]) / h
    t2 = t * t
    t3 = t2 * t
    return ((2.0 * t3 - 3.0 * t2 + 1.0) * V[i] + (t3 - 2.0 * t2 + t) * h * D[i]
            + (3.0 * t2 - 2.0 * t3) * V[i + 1] + (t3 - t2) * h * D[i + 1])


@njit(cache=True, nogil=True, _nrt=False)
def _trace_row(trace, m, t, x, q, c):
    if m < trace.shape[0]:
        trace[m, 0] = t
        trace[m, 1] = x
        trace[m, 2] = q
        trace[m, 3] = c
        return m + 1
    return m


@njit(cache=True, nogil=True)
def _adaptive_kernel(ntr, x0, q0, sigma, eta, dt, max_steps, eps, thr,
                     k0, k1, p_lo, p_hi, K, V, D, bucket,
                     cost, t50, t95, qT, capped, steps, sww, swq, sqq, status,
                     trace, stride):
    """Euler paths of f*, g* (ntr = 0) or the truncated pair f_n, g_n (ntr = n)."""
    sdt = math.sqrt(dt)
    c1 = (4.0 / 3.0) ** (1.0 / 3.0) * sigma ** (2.0 / 3.0) * eta ** (-2.0 / 3.0)
    c2 = (4.0 / 3.0) ** (2.0 / 3.0) * sigma ** (1.0 / 3.0) * eta ** (-1.0 / 3.0)
    ax0 = abs(x0)
    inv_n = 1.0 / ntr if ntr > 0 else 0.0
    do_trace = trace.shape[0] > 0
    m = 0
    for path in range(p_lo, p_hi):
        r = path - p_lo
        st = new_stream(k0, k1, path)
        x = x0
        y = np.cbrt(x0)
        q = q0
        c = 0.0
        ww = 0.0
        wq = 0.0
        qq = 0.0
        h50 = np.nan
        h95 = np.nan
        bad = False
        if do_trace:
            m = _trace_row(trace, 0, 0.0, x, q, c)
        k = 0
        last = 0
        if ax0 < thr:
            h50 = 0.0
            h95 = 0.0
        else:
            while k < max_steps:
                a, b = draw(st)
                z = zig_fast(a, b)
                if z != z:
                    z = zig_slow(st, a, b)
                dW = sdt * z
                if ntr > 0 and not (abs(x) > inv_n and inv_n < q < 1.0 - inv_n):
                    f = x * inv_n
                    g = 0.0
                else:
                    ph = _phi_lookup(q, K, V, D, bucket)
                    iq = ph / q
                    f = c1 * y * iq
                    g = -c2 * ph * iq / y
                c += 0.5 * eta * f * f * dt - sigma * x * dW
                x -= f * dt
                qn = q + g * dW
                if qn < eps:
                    qn = eps
                elif qn > 1.0 - eps:
                    qn = 1.0 - eps
                dq = qn - q
                ww += dW * dW
                wq += dW * dq
                qq += dq * dq
                q = qn
                # Halley step keeps y = cbrt(x) without calling cbrt
                y3 = y * y * y
                if x != 0.0:
                    y = y * (y3 + 2.0 * x) / (2.0 * y3 + x)
                k += 1
                if not (math.isfinite(x) and math.isfinite(c)):
                    bad = True
                    break
                ax = abs(x)
                if ax <= 0.5 * ax0:
                    if h50 != h50:
                        h50 = k * dt
                    if ax <= 0.05 * ax0:
                        if h95 != h95:
                            h95 = k * dt
                        if ax < thr:
                            break
                if do_trace and k % stride == 0:
                    m = _trace_row(trace, m, k * dt, x, q, c)
                    last = k
        done = ax0 < thr or abs(x) < thr
        if do_trace and last != k:
            m = _trace_row(trace, m, k * dt, x, q, c)
        cost[r] = c
        qT[r] = q
        capped[r] = not done and not bad
        t50[r] = h50
        t95[r] = h95
        steps[r] = k
        sww[r] = ww
        swq[r] = wq
        sqq[r] = qq
        status[r] = 1 if bad else 0
    return m


@njit(cache=True, nogil=True)
def _det_kernel(kind, scale, x0, q0, sigma, eta, dt, max_steps, thr,
                k0, k1, p_lo, p_hi,
                cost, t50, t95, qT, capped, steps, sww, swq, sqq, status,
                trace, stride):
    """Exact exponential (kind EXP, scale tau) or linear (VWAP, horizon T) positions."""
    sdt = math.sqrt(dt)
    ax0 = abs(x0)
    do_trace = trace.shape[0] > 0
    m = 0
    for path in range(p_lo, p_hi):
        r = path - p_lo
        st = new_stream(k0, k1, path)
        x = x0
        c = 0.0
        h50 = np.nan
        h95 = np.nan
        bad = False
        if do_trace:
            m = _trace_row(trace, 0, 0.0, x, q0, c)
        k = 0
        last = 0
        if ax0 < thr:
            h50 = 0.0
            h95 = 0.0
        else:
            while k < max_steps:
                a, b = draw(st)
                z = zig_fast(a, b)
                if z != z:
                    z = zig_slow(st, a, b)
                dW = sdt * z
                t1 = (k + 1) * dt
                if kind == EXP:
                    xn = x0 * math.exp(-t1 / scale)
                    # impact over the step integrates exactly to eta/(4 tau) (x_k^2 - x_{k+1}^2)
                    c += eta / (4.0 * scale) * (x * x - xn * xn) - sigma * x * dW
                else:
                    rate = x0 / scale
                    dur = min(t1, scale) - min(k * dt, scale)
                    xn = x0 * max(1.0 - t1 / scale, 0.0)
                    c += 0.5 * eta * rate * rate * dur - sigma * x * dW
                x = xn
                k += 1
                if not math.isfinite(c):
                    bad = True
                    break
                ax = abs(x)
                if ax <= 0.5 * ax0:
                    if h50 != h50:
                        h50 = k * dt
                    if ax <= 0.05 * ax0:
                        if h95 != h95:
                            h95 = k * dt
                        if ax < thr:
                            break
                if do_trace and k % stride == 0:
                    m = _trace_row(trace, m, k * dt, x, q0, c)
                    last = k
        done = ax0 < thr or abs(x) < thr
        if do_trace and last != k:
            m = _trace_row(trace, m, k * dt, x, q0, c)
        cost[r] = c
        qT[r] = q0
        capped[r] = not done and not bad
        t50[r] = h50
        t95[r] = h95
        steps[r] = k
        sww[r] = 0.0
        swq[r] = 0.0
        sqq[r] = 0.0
        status[r] = 1 if bad else 0
    return m


def _check_inputs(x0, q0, p, cfg):
    if not isinstance(p, MarketParams):
        raise TypeError("p must be MarketParams")
    if abs(x0) > p.position_bound_M:
        raise ValueError(f"|x0| = {abs(x0)} exceeds position bound {p.position_bound_M}")
    if not 0.0 <= q0 <= 1.0:
        raise ValueError(f"q0 must lie in [0, 1], got {q0}")
    if x0 != 0.0 and not cfg.completion_threshold < abs(x0):
        raise ValueError("completion_threshold must be smaller than |x0|")


class _Setup:
    def __init__(self, policies, x0, q0, p, cfg, table):
        _check_inputs(x0, q0, p, cfg)
        self.names = [_policy_name(s) for s in policies]
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate policies in batch")
        enc = [_encode(s, x0, q0, p) for s in policies]
        self.kinds = np.array([e[0] for e in enc], dtype=np.int64)
        self.scales = np.array([e[1] for e in enc], dtype=float)
        self.ntr = np.array([e[2] for e in enc], dtype=np.int64)
        self.tab = _table_arrays(table or default_table())
        self.k0, self.k1 = split_seed(cfg.master_seed)
        self.x0, self.q0, self.p, self.cfg = float(x0), float(q0), p, cfg

    def run(self, p_lo, p_hi, cols, trace=None, stride=1):
        """Run paths [p_lo, p_hi) of every policy into ``cols`` (arrays shaped (P, p_hi - p_lo)).

        Returns the number of trace rows written per policy.
        """
        cfg = self.cfg
        rows = []
        for j in range(self.kinds.size):
            tr = np.zeros((0, 4)) if trace is None else trace[j]
            out = [a[j] for a in cols]
            if self.kinds[j] in (OPT, TRUNC):
                n = _adaptive_kernel(self.ntr[j], self.x0, self.q0, self.p.sigma, self.p.eta,
                                     cfg.dt, cfg.max_steps, cfg.q_floor, cfg.completion_threshold,
                                     self.k0, self.k1, p_lo, p_hi, *self.tab, *out, tr, stride)
            else:
                n = _det_kernel(self.kinds[j], self.scales[j], self.x0, self.q0, self.p.sigma,
                                self.p.eta, cfg.dt, cfg.max_steps, cfg.completion_threshold,
                                self.k0, self.k1, p_lo, p_hi, *out, tr, stride)
            rows.append(n)
        return rows

    def single(self, i, trace=None, stride=1):
        out = _alloc(self.kinds.size, 1)
        rows = self.run(i, i + 1, [out[name] for name, _ in _FIELDS], trace, stride)
        return out, rows

    def trace_path(self, i):
        """Re-run one path storing at most _MAX_TRACE rows per policy."""
        out, _ = self.single(i)
        n = int(out["steps"].max())
        stride = max(1, math.ceil(n / (_MAX_TRACE - 2)))
        buf = np.full((self.kinds.size, _MAX_TRACE, 4), np.nan)
        _, rows = self.single(i, buf, stride)
        return [buf[j, : rows[j]].copy() for j in range(self.kinds.size)]


_FIELDS = (("cost", float), ("t50", float), ("t95", float), ("qT", float), ("capped", np.bool_),
           ("steps", np.int64), ("sww", float), ("swq", float), ("sqq", float), ("status", np.int8))


def _alloc(P, n):
    return {name: np.zeros((P, n), dtype=dt) for name, dt in _FIELDS}


def simulate_batch(policies=None, x0=1.0, q0=0.5, p=None, cfg=None, table=None, trace=0):
    """Simulate ``cfg.n_paths`` paths of every policy on shared Brownian increments.

    Returns ``{policy name: PathBatch}`` in the order given. ``trace=k`` stores
    downsampled (t, X, Q, C) traces for paths 0..k-1.
    """
    cfg = cfg or SimConfig()
    p = p or MarketParams(5.06, 1.56e3)
    policies = list(policies if policies is not None else cfg.policy_set)
    if not policies:
        raise ValueError("policy list is empty")
    setup = _Setup(policies, x0, q0, p, cfg, table)
    P, n = len(policies), int(cfg.n_paths)
    out = _alloc(P, n)
    cols = [out[name] for name, _ in _FIELDS]
    chunks = [(lo, min(lo + cfg.chunk, n)) for lo in range(0, n, cfg.chunk)]

    def work(c):
        lo, hi = c
        setup.run(lo, hi, [a[:, lo:hi] for a in cols])

    if cfg.workers == 1:
        for c in chunks:
            work(c)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            list(ex.map(work, chunks))

    bad = np.argwhere(out["status"] != 0)
    if bad.size:
        j, i = (int(v) for v in bad[0])
        tr = setup.trace_path(i)[j]
        raise PathError(f"non-finite state for policy {setup.names[j]} on path {i}",
                        path_index=i, policy=setup.names[j], trace=tr)

    traces = [dict() for _ in range(P)]
    for i in range(min(int(trace), n)):
        for j, tr in enumerate(setup.trace_path(i)):
            traces[j][i] = tr

    return {
        name: PathBatch(name, out["cost"][j], out["t50"][j], out["t95"][j], out["qT"][j],
                        out["capped"][j], out["steps"][j], out["sww"][j], out["swq"][j],
                        out["sqq"][j], cfg.q_floor, traces[j])
        for j, name in enumerate(setup.names)
    }


def simulate_path(policy, x0, q0, p, cfg, path_index, table=None, trace=False):
    """One path of one policy; identical to row ``path_index`` of a batch."""
    setup = _Setup([policy], x0, q0, p, cfg, table)
    i = int(path_index)
    out, _ = setup.single(i)
    if out["status"][0, 0] != 0:
        raise PathError(f"non-finite state on path {i}", path_index=i,
                        policy=setup.names[0], trace=setup.trace_path(i)[0])
    tr = setup.trace_path(i)[0] if trace else None
    return PathResult(float(out["cost"][0, 0]), float(out["t50"][0, 0]), float(out["t95"][0, 0]),
                      float(out["qT"][0, 0]), bool(out["capped"][0, 0]), int(out["steps"][0, 0]), tr)


def _bootstrap(values, stat, n_boot, rng):
    n = values.size
    est = np.empty(n_boot)
    for b in range(n_boot):
        est[b] = stat(values[rng.integers(0, n, n)])
    return float(est.std(ddof=1))


def aggregate(results, q, n_boot=200, seed=0):
    """Table-style statistics of one policy's shortfall at CVaR level q."""
    if isinstance(results, PathBatch):
        c, t50, t95 = results.shortfall, results.t50, results.t95
        qT, capped, eps = results.terminal_q, results.capped, results.q_floor
    else:
        results = list(results)
        if not results:
            raise ValueError("no results to aggregate")
        c = np.array([r.shortfall for r in results])
        t50 = np.array([r.completion_time_50 for r in results])
        t95 = np.array([r.completion_time_95 for r in results])
        qT = np.array([r.terminal_q for r in results])
        capped = np.array([r.capped for r in results])
        eps = 1e-5
    if c.size == 0:
        raise ValueError("no results to aggregate")
    rng = np.random.default_rng(seed)
    se_cvar = _bootstrap(c, lambda v: empirical_cvar(v, q), n_boot, rng) if c.size > 1 else float("nan")
    se_q = _bootstrap(qT, np.mean, n_boot, rng) if c.size > 1 else float("nan")

    def _avg(t):
        return float(np.nanmean(t)) if np.any(np.isfinite(t)) else float("nan")

    return ShortfallStats(
        cvar=empirical_cvar(c, q),
        var=empirical_var(c, q),
        mean=float(c.mean()),
        median=float(np.median(c)),
        std=float(c.std(ddof=1)) if c.size > 1 else 0.0,
        avg_time_50=_avg(t50),
        avg_time_95=_avg(t95),
        n=int(c.size),
        mc_stderr_cvar=se_cvar,
        capped_fraction=float(np.mean(capped)),
        mean_terminal_q=float(qT.mean()),
        stderr_terminal_q=se_q,
        upper_fraction=float(np.mean(qT > 1.0 - 2.0 * eps)),
        lower_fraction=float(np.mean(qT < 2.0 * eps)),
    )


@dataclass
class Frontier:
    points: dict  # family -> array of (q, mean, median)
    thresholds: np.ndarray
    min_tail: dict  # family -> min over q of P[C > c] on the threshold grid

    def median_gain(self, family, other):
        """Other's median interpolated at family's means minus family's median.

        Positive entries mark points where ``family`` has the smaller median at a
        matched mean; means outside other's range give nan.
        """
        a, b = self.points[family], self.points[other]
        order = np.argsort(b[:, 1])
        bm, bmed = b[order, 1], b[order, 2]
        out = np.full(a.shape[0], np.nan)
        for i, (_, m, med) in enumerate(a):
            if bm[0] <= m <= bm[-1]:
                out[i] = np.interp(m, bm, bmed) - med
        return out


def frontier(samples, thresholds=None):
    """Mean/median pairs and pointwise-min tail curves per policy family.

    ``samples`` maps family -> {q: shortfall samples}.
    """
    if thresholds is None:
        allc = np.concatenate([np.asarray(v, float) for fam in samples.values() for v in fam.values()])
        thresholds = np.linspace(np.percentile(allc, 1), np.percentile(allc, 99), 201)
    thresholds = np.asarray(thresholds, dtype=float)
    points, tails = {}, {}
    for fam, byq in samples.items():
        if not byq:
            raise ValueError(f"family {fam!r} has no samples")
        rows, curves = [], []
        for q in sorted(byq):
            c = np.sort(np.asarray(byq[q], dtype=float))
            rows.append((q, c.mean(), np.median(c)))
            curves.append(1.0 - np.searchsorted(c, thresholds, side="right") / c.size)
        points[fam] = np.array(rows)
        tails[fam] = np.min(curves, axis=0)
    return Frontier(points, thresholds, tails)
