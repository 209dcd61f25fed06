"""Tail-risk measures for implementation shortfall.

CVaR is taken at quantile level ``q``: the average of the worst ``q``-fraction
of outcomes. The scaled variant ``scvar_q = q * cvar_q`` stays finite at
``q = 0`` and is concave in ``q``; most functions here work with it directly.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "norm_ppf",
    "norm_pdf",
    "kappa",
    "normal_cvar",
    "empirical_scvar",
    "empirical_var",
    "empirical_cvar",
    "ScenarioTree",
    "tree_scvar_oracle",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Acklam's rational approximation coefficients.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _check_level(q, allow_zero=True):
    q = np.asarray(q, dtype=float)
    lo_bad = q < 0.0 if allow_zero else q <= 0.0
    if np.any(lo_bad | (q > 1.0) | np.isnan(q)):
        raise ValueError(f"quantile level must lie in {'[0, 1]' if allow_zero else '(0, 1]'}, got {q}")
    return q


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def norm_ppf(p):
    """Standard normal quantile function.

    Acklam's rational approximation (relative error ~1e-9) followed by one
    Halley step against ``erfc``, which brings the error to roundoff.
    Endpoints map to -inf / +inf.
    """
    from scipy.special import erfc

    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0) | np.isnan(p)):
        raise ValueError("probability must lie in [0, 1]")
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    z = np.empty_like(p)

    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    if np.any(mid):
        qq = p[mid] - 0.5
        r = qq * qq
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * qq
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        z[mid] = num / den
    for mask, sign, src in ((lo, 1.0, p), (hi, -1.0, 1.0 - p)):
        if np.any(mask):
            with np.errstate(divide="ignore"):
                qq = np.sqrt(-2.0 * np.log(src[mask]))
            num = ((((_C[0] * qq + _C[1]) * qq + _C[2]) * qq + _C[3]) * qq + _C[4]) * qq + _C[5]
            den = (((_D[0] * qq + _D[1]) * qq + _D[2]) * qq + _D[3]) * qq + 1.0
            z[mask] = sign * num / den

    finite = np.isfinite(z)
    if np.any(finite):
        zf, pf = z[finite], p[finite]
        # residual from the near tail: 1 - p is exact for p > 1/2
        e = np.where(zf < 0.0, 0.5 * erfc(-zf / np.sqrt(2.0)) - pf,
                     (1.0 - pf) - 0.5 * erfc(zf / np.sqrt(2.0)))
        # e / pdf(z) in log space; pdf underflows far out in the tail
        with np.errstate(divide="ignore"):
            u = np.sign(e) * np.exp(np.log(np.abs(e)) + 0.5 * zf * zf + np.log(_SQRT_2PI))
        z[finite] = zf - u / (1.0 + 0.5 * zf * u)
    return z[0] if scalar else z


def kappa(q):
    """Normal tail density ``kappa(q) = pdf(ppf(1 - q))``.

    Symmetric in ``q <-> 1 - q`` and vanishes at both endpoints.
    """
    q = _check_level(q)
    p = np.minimum(q, 1.0 - q)
    with np.errstate(invalid="ignore"):
        out = np.where(p > 0.0, norm_pdf(norm_ppf(np.where(p > 0.0, p, 0.5))), 0.0)
    return float(out) if out.ndim == 0 else out


def normal_cvar(mu, sigma, q):
    """CVaR of a N(mu, sigma^2) cost at level ``q`` (``q > 0``)."""
    q = _check_level(q, allow_zero=False)
    if np.any(np.asarray(sigma) < 0):
        raise ValueError("sigma must be nonnegative")
    return mu + sigma * kappa(q) / q


def _as_samples(values, weights):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("sample set is empty")
    if weights is None:
        w = np.full(v.size, 1.0 / v.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != v.shape:
            raise ValueError("weights and values differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
    return v, w


def _tail_take(v, w, q):
    """Probability mass taken from each sample by the worst-``q`` selection."""
    order = np.argsort(-v, kind="stable")
    ws = w[order]
    before = np.cumsum(ws) - ws
    take = np.empty_like(w)
    take[order] = np.clip(q - before, 0.0, ws)
    return take


def empirical_scvar(values, q, weights=None):
    """Scaled CVaR of a discrete sample.

    Picks the largest costs until probability mass ``q`` is used up; the
    boundary atom is split so the selected mass is exactly ``q``.
    """
    q = float(_check_level(q))
    v, w = _as_samples(values, weights)
    if q == 1.0:
        return float(np.dot(w, v))
    return float(np.dot(_tail_take(v, w, q), v))


def empirical_var(values, q, weights=None):
    """Value-at-risk: the lower ``(1 - q)``-quantile ``inf{c : F(c) >= 1 - q}``."""
    q = float(_check_level(q))
    v, w = _as_samples(values, weights)
    order = np.argsort(v, kind="stable")
    cdf = np.cumsum(w[order])
    level = 1.0 - q
    # tolerance keeps exact atoms (e.g. F = 1/2 on six points) on the left
    i = int(np.searchsorted(cdf, level - 1e-12 * max(1.0, level), side="left"))
    return float(v[order][min(i, v.size - 1)])


def empirical_cvar(values, q, weights=None):
    q = float(_check_level(q, allow_zero=False))
    return empirical_scvar(values, q, weights) / q


@dataclass(frozen=True)
class ScenarioTree:
    """Finite rooted tree with conditional branch probabilities.

    ``parent[i]`` is the parent of node ``i`` (-1 for the root) and ``prob[i]``
    the probability of moving to ``i`` from its parent. Values may be floats or
    ``Fraction`` for exact arithmetic.
    """

    parent: Sequence[int]
    prob: Sequence

    def children(self):
        kids = [[] for _ in self.parent]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        return kids

    @property
    def leaves(self):
        return [i for i, k in enumerate(self.children()) if not k]

    def validate(self):
        n = len(self.parent)
        if len(self.prob) != n:
            raise ValueError("parent and prob differ in length")
        roots = [i for i, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"tree needs exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parent):
            if p >= n:
                raise ValueError(f"node {i} has unknown parent {p}")
            if self.prob[i] < 0:
                raise ValueError(f"negative branch probability at node {i}")
        for i, kids in enumerate(self.children()):
            if kids:
                total = sum(self.prob[k] for k in kids)
                if abs(total - 1) > 1e-12:
                    raise ValueError(f"branch probabilities out of node {i} sum to {total}")
        # every node must reach the root (no cycles)
        for i in range(n):
            seen, j = 0, i
            while self.parent[j] >= 0:
                j = self.parent[j]
                seen += 1
                if seen > n:
                    raise ValueError("parent structure contains a cycle")
        return roots[0]


def tree_scvar_oracle(terminal_costs, tree, q):
    """Optimal adversary quantiles on a scenario tree.

    Solves ``max E[C Q]`` over ``0 <= Q <= 1``, ``E[Q] = q`` at the leaves by
    greedy tail selection, then fills interior nodes by conditional
    expectation. ``terminal_costs`` is aligned with ``tree.leaves``.

    Returns ``(scvar, node_quantiles)`` where ``node_quantiles[i]`` is the
    quantile value at node ``i``. Plain Python arithmetic is used so
    ``Fraction`` inputs give exact results.
    """
    root = tree.validate()
    if not 0 <= q <= 1:
        raise ValueError(f"quantile level must lie in [0, 1], got {q}")
    kids = tree.children()
    leaves = tree.leaves
    if len(terminal_costs) != len(leaves):
        raise ValueError(f"expected {len(leaves)} terminal costs, got {len(terminal_costs)}")

    one = Fraction(1) if isinstance(q, Fraction) else 1.0
    absprob = [None] * len(tree.parent)
    absprob[root] = one
    stack = [root]
    while stack:
        i = stack.pop()
        for k in kids[i]:
            absprob[k] = absprob[i] * tree.prob[k]
            stack.append(k)

    node_q = [None] * len(tree.parent)
    budget = q
    for leaf, _ in sorted(zip(leaves, terminal_costs), key=lambda lc: lc[1], reverse=True):
        w = absprob[leaf]
        if w == 0:
            node_q[leaf] = 0 * one
            continue
        take = min(w, max(budget, 0 * one))
        node_q[leaf] = take / w
        budget -= take

    def fill(i):
        if node_q[i] is None:
            node_q[i] = sum(tree.prob[k] * fill(k) for k in kids[i])
        return node_q[i]

    fill(root)
    scvar = sum(absprob[l] * node_q[l] * c for l, c in zip(leaves, terminal_costs))
    return scvar, node_q
