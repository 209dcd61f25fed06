"""Command-line front end: ``cvarexec <command> [options]``.

Commands emit CSV (6 significant digits) for tables and JSON (full precision)
for structured results. Simulation commands read a scenario JSON; without
``--scenario`` the stock desk scenario (sigma 5.06, eta 1560, x0 1) is used.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import phi as phimod
from .policy import AugmentedState, MarketParams, f_star, g_star, value_function
from .schedules import UPS_EXP_VWAP, exp_optimal, ratios, vwap_optimal
from .sim import SimConfig, aggregate, frontier, parse_policy, simulate_batch

__all__ = ["Scenario", "ScenarioError", "main", "build_parser"]


class ScenarioError(ValueError):
    """Invalid scenario field; ``path`` is the dotted location, e.g. ``sim.dt``."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


_MARKET_KEYS = ("sigma", "eta", "position_bound_M")
_SIM_KEYS = ("dt", "n_paths", "master_seed", "q_floor", "completion_threshold",
             "horizon_cap", "policy_set", "workers", "chunk")
_OUT_KEYS = ("dir", "csv", "json")


@dataclass(frozen=True)
class Scenario:
    market: MarketParams = MarketParams(5.06, 1.56e3)
    x0: float = 1.0
    q_list: tuple = (0.1, 0.5, 0.9)
    sim: SimConfig = SimConfig()
    outputs: dict = field(default_factory=lambda: {"dir": ".", "csv": True, "json": True})

    def to_dict(self):
        sim = asdict(self.sim)
        sim["policy_set"] = list(sim["policy_set"])
        return {
            "market": asdict(self.market),
            "x0": float(self.x0),
            "q_list": [float(q) for q in self.q_list],
            "sim": sim,
            "outputs": dict(self.outputs),
        }

    def dumps(self):
        """Canonical serialization: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError("<root>", f"not valid JSON ({e})") from None
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ScenarioError("<root>", "expected a JSON object")
        _no_extra(d, ("market", "x0", "q_list", "sim", "outputs"), "")
        base = cls()

        m = d.get("market", {})
        _obj(m, "market")
        _no_extra(m, _MARKET_KEYS, "market.")
        mk = {k: _num(m.get(k, getattr(base.market, k)), f"market.{k}", positive=True)
              for k in _MARKET_KEYS}
        market = MarketParams(**mk)

        x0 = _num(d.get("x0", base.x0), "x0")
        if abs(x0) > market.position_bound_M:
            raise ScenarioError("x0", f"|x0| = {abs(x0)} exceeds market.position_bound_M")

        ql = d.get("q_list", list(base.q_list))
        if not isinstance(ql, list) or not ql:
            raise ScenarioError("q_list", "must be a nonempty list")
        q_list = []
        for i, q in enumerate(ql):
            q = _num(q, f"q_list[{i}]")
            if not 0.0 < q < 1.0:
                raise ScenarioError(f"q_list[{i}]", f"must lie in (0, 1), got {q}")
            q_list.append(q)

        s = d.get("sim", {})
        _obj(s, "sim")
        _no_extra(s, _SIM_KEYS, "sim.")
        kw = {}
        for k in ("dt", "q_floor", "completion_threshold", "horizon_cap"):
            kw[k] = _num(s.get(k, getattr(base.sim, k)), f"sim.{k}", positive=True)
        for k in ("n_paths", "master_seed", "workers", "chunk"):
            kw[k] = _int(s.get(k, getattr(base.sim, k)), f"sim.{k}", minimum=0 if k == "master_seed" else 1)
        if kw["master_seed"] >= 2**64:
            raise ScenarioError("sim.master_seed", "must fit in 64 bits")
        if kw["q_floor"] > 0.01:
            raise ScenarioError("sim.q_floor", "must lie in (0, 0.01]")
        if x0 != 0 and not kw["completion_threshold"] < abs(x0):
            raise ScenarioError("sim.completion_threshold", "must be smaller than |x0|")
        ps = s.get("policy_set", list(base.sim.policy_set))
        if not isinstance(ps, list) or not ps:
            raise ScenarioError("sim.policy_set", "must be a nonempty list")
        for i, name in enumerate(ps):
            try:
                parse_policy(name)
            except (ValueError, TypeError) as e:
                raise ScenarioError(f"sim.policy_set[{i}]", str(e)) from None
        kw["policy_set"] = tuple(ps)
        sim = SimConfig(**kw)

        o = d.get("outputs", {})
        _obj(o, "outputs")
        _no_extra(o, _OUT_KEYS, "outputs.")
        outputs = dict(base.outputs)
        for k in _OUT_KEYS:
            if k in o:
                want = str if k == "dir" else bool
                if not isinstance(o[k], want):
                    raise ScenarioError(f"outputs.{k}", f"expected {want.__name__}")
                outputs[k] = o[k]
        return cls(market, x0, tuple(q_list), sim, outputs)


def _obj(v, path):
    if not isinstance(v, dict):
        raise ScenarioError(path, "expected a JSON object")


def _no_extra(d, keys, prefix):
    for k in d:
        if k not in keys:
            raise ScenarioError(f"{prefix}{k}", "unknown field")


def _num(v, path, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ScenarioError(path, "must be finite")
    if positive and not v > 0:
        raise ScenarioError(path, f"must be positive, got {v}")
    return v


def _int(v, path, minimum):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(path, f"expected an integer, got {v!r}")
    if v < minimum:
        raise ScenarioError(path, f"must be at least {minimum}")
    return v


# ---------------------------------------------------------------- output helpers

def _g6(v):
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g6(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _json_text(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


class _Sink:
    """Writes named artifacts into ``--out`` or, without it, the primary one to stdout."""

    def __init__(self, out, stdout):
        self.out = out
        self.stdout = stdout
        if out:
            os.makedirs(out, exist_ok=True)

    def emit(self, name, text, primary=True):
        if self.out:
            with open(os.path.join(self.out, name), "w", newline="") as fh:
                fh.write(text)
        elif primary:
            self.stdout.write(text)


def _floats(text, name):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError(name, f"could not parse {text!r} as comma-separated numbers") from None
    if not vals:
        raise ScenarioError(name, "empty list")
    return vals


def _scenario(args):
    if args.scenario:
        with open(args.scenario) as fh:
            sc = Scenario.loads(fh.read())
    else:
        sc = Scenario()
    upd = {}
    if args.seed is not None:
        upd["master_seed"] = _int(args.seed, "--seed", 0)
        if upd["master_seed"] >= 2**64:
            raise ScenarioError("--seed", "must fit in 64 bits")
    if args.paths is not None:
        upd["n_paths"] = _int(args.paths, "--paths", 1)
    if args.dt is not None:
        upd["dt"] = _num(args.dt, "--dt", positive=True)
    if getattr(args, "workers", None) is not None:
        upd["workers"] = _int(args.workers, "--workers", 1)
    if upd:
        sc = replace(sc, sim=replace(sc.sim, **upd))
    return sc


def _theory(q, x0, p):
    st = AugmentedState(x0, q)
    return {
        "opt": value_function(st, p) / q,
        "exp": exp_optimal(x0, q, p)[1] / q,
        "vwap": vwap_optimal(x0, q, p)[1] / q,
    }


# ---------------------------------------------------------------- commands

def cmd_constants(args, out):
    lo, hi = args.bracket
    c = phimod.compute_constants((lo, hi))
    from .special import z_right

    zl = phimod.param_left(phimod.THETA_MIN, c)
    zr = phimod.param_right(phimod.THETA_MIN, c)
    report = {
        "theta_bar": c.theta_bar,
        "a": c.a,
        "b": c.b,
        "junction_q": c.junction_q,
        "junction_phi": c.junction_phi,
        "junction_slope": c.junction_slope,
        "tolerances": {
            "abs_Z_R_at_theta_bar": abs(float(z_right(c.theta_bar).value)),
            "b_over_a_residual": abs(c.b / c.a - (2.0 / 9.0) ** (1.0 / 3.0)),
            "junction_q_left_gap": abs(zl[0] - c.junction_q),
            "junction_q_right_gap": abs(zr[0] - c.junction_q),
            "junction_phi_left_gap": abs(zl[1] - c.junction_phi),
            "junction_phi_right_gap": abs(zr[1] - c.junction_phi),
            "branch_probe_theta": phimod.THETA_MIN,
        },
    }
    if args.json:
        out.emit("constants.json", _json_text(report))
        return 0
    tol = report["tolerances"]
    lines = [
        f"theta_bar = {c.theta_bar:.10f}   |Z_R(theta_bar)| = {tol['abs_Z_R_at_theta_bar']:.2e}",
        f"a = {c.a:.10f}",
        f"b = {c.b:.10f}   |b/a - (2/9)^(1/3)| = {tol['b_over_a_residual']:.2e}",
        f"junction_q = {c.junction_q:.10f}   branch gaps at theta={phimod.THETA_MIN:g}: "
        f"{tol['junction_q_left_gap']:.2e} (left), {tol['junction_q_right_gap']:.2e} (right)",
        f"junction_phi = {c.junction_phi:.10f}   branch gaps: "
        f"{tol['junction_phi_left_gap']:.2e} (left), {tol['junction_phi_right_gap']:.2e} (right)",
        f"junction_slope = {c.junction_slope:.10f}",
    ]
    out.emit("constants.txt", "\n".join(lines) + "\n")
    return 0


def cmd_phi_table(args, out):
    t = phimod.build_phi_table(args.n_left, args.n_right)
    res = phimod.ef_residual(t.knots, t)
    rows = [(q, v, th, br, r) for (q, v, th, br), r in zip(t.rows(), res)]
    out.emit("phi_table.csv", _csv_text(["q", "phi", "theta", "branch", "residual"], rows))
    if args.json:
        summary = {"knots": len(t), "max_residual": float(np.nanmax(res)),
                   "q_lo": t.q_lo, "q_hi": t.q_hi, "constants": t.constants._asdict(),
                   "columns": ["q", "phi", "theta", "branch", "residual"], "rows": rows}
        out.emit("phi_table.json", _json_text(summary), primary=False)
    return 0


def _grid(args, sc):
    xs = _floats(args.x, "--x") if args.x else list(np.round(np.linspace(0.1, 1.0, 10), 12))
    qs = _floats(args.q, "--q") if args.q else list(sc.q_list)
    for q in qs:
        if not 0.0 < q < 1.0:
            raise ScenarioError("--q", f"levels must lie in (0, 1), got {q}")
    for x in xs:
        if abs(x) > sc.market.position_bound_M:
            raise ScenarioError("--x", f"|x| = {abs(x)} exceeds the position bound")
    return xs, qs


def cmd_value(args, out):
    sc = _scenario(args)
    xs, qs = _grid(args, sc)
    rows = []
    for x in xs:
        for q in qs:
            v = value_function(AugmentedState(x, q), sc.market)
            rows.append((x, q, v, v / q))
    out.emit("value.csv", _csv_text(["x", "q", "V", "cvar"], rows))
    if args.json:
        out.emit("value.json", _json_text({"rows": rows}), primary=False)
    return 0


def cmd_policy_eval(args, out):
    sc = _scenario(args)
    xs, qs = _grid(args, sc)
    rows = []
    for x in xs:
        for q in qs:
            s = AugmentedState(x, q)
            g = g_star(s, sc.market) if x != 0 else float("nan")
            rows.append((x, q, f_star(s, sc.market), g, value_function(s, sc.market)))
    out.emit("policy.csv", _csv_text(["x", "q", "f_star", "g_star", "V"], rows))
    if args.json:
        out.emit("policy.json", _json_text({"rows": rows}), primary=False)
    return 0


def cmd_compare(args, out):
    sc = _scenario(args)
    qs = _floats(args.q, "--q") if args.q else list(np.round(np.arange(1, 100) / 100.0, 12))
    rows = []
    for q in qs:
        if not 0.0 < q < 1.0:
            raise ScenarioError("--q", f"levels must lie in (0, 1), got {q}")
        u = ratios(q)
        th = _theory(q, sc.x0, sc.market)
        rows.append((q, *u, th["opt"], th["exp"], th["vwap"]))
    header = ["q", "ups_opt_exp", "ups_opt_vwap", "ups_exp_vwap", "cvar_opt", "cvar_exp", "cvar_vwap"]
    out.emit("compare.csv", _csv_text(header, rows))
    if args.json:
        out.emit("compare.json", _json_text({"ups_exp_vwap": UPS_EXP_VWAP, "rows": rows}), primary=False)
    return 0


_STAT_COLS = ("cvar", "var", "mean", "median", "std", "avg_time_50", "avg_time_95", "n",
              "mc_stderr_cvar", "capped_fraction", "mean_terminal_q", "stderr_terminal_q",
              "upper_fraction", "lower_fraction")


def _run(sc, k_trace=0):
    """{q: {policy: PathBatch}} over the scenario's q list."""
    return {q: simulate_batch(sc.sim.policy_set, sc.x0, q, sc.market, sc.sim, trace=k_trace)
            for q in sc.q_list}


def cmd_simulate(args, out):
    sc = _scenario(args)
    if args.trace and not args.out:
        raise ScenarioError("--trace", "traces need --out")
    runs = _run(sc, args.trace or 0)
    rows, records = [], []
    for q, batches in runs.items():
        th = _theory(q, sc.x0, sc.market)
        for name, b in batches.items():
            s = aggregate(b, q)
            theo = th.get(name, float("nan"))
            rows.append((q, name, s.cvar, theo) + tuple(getattr(s, c) for c in _STAT_COLS[1:]))
            rec = {c: getattr(s, c) for c in _STAT_COLS}
            rec.update(q=q, policy=name, cvar_theo=theo)
            records.append(rec)
            if args.trace:
                trows = [(i, *r) for i, tr in sorted(b.traces.items()) for r in tr]
                out.emit(f"trace_q{q:g}_{name}.csv", _csv_text(["path", "t", "x", "q", "c"], trows), primary=False)
    header = ["q", "policy", "cvar", "cvar_theo"] + list(_STAT_COLS[1:])
    out.emit("table.csv", _csv_text(header, rows))
    if args.json or args.out:
        out.emit("results.json", _json_text({"scenario": sc.to_dict(), "results": records}),
                 primary=not args.out and args.json)
    return 0


def cmd_frontier(args, out):
    sc = _scenario(args)
    runs = _run(sc)
    fams = {}
    for q, batches in runs.items():
        for name, b in batches.items():
            fams.setdefault(name, {})[q] = b.shortfall
    fr = frontier(fams)
    prow = [(fam, *r) for fam, pts in fr.points.items() for r in pts]
    out.emit("frontier_points.csv", _csv_text(["family", "q", "mean", "median"], prow))
    names = list(fr.min_tail)
    trow = [(c, *(fr.min_tail[n][i] for n in names)) for i, c in enumerate(fr.thresholds)]
    out.emit("frontier_tail.csv", _csv_text(["threshold"] + [f"min_tail_{n}" for n in names], trow),
             primary=False)
    if args.json or args.out:
        gains = {f"{a}_vs_{b}": fr.median_gain(a, b).tolist() for a in names for b in names if a != b}
        doc = {"scenario": sc.to_dict(), "points": {k: v.tolist() for k, v in fr.points.items()},
               "median_gain": gains}
        out.emit("frontier.json", _json_text(doc), primary=False)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--seed", type=int, help="master seed (u64), overrides the scenario")
    common.add_argument("--out", help="output directory (default: primary table to stdout)")
    common.add_argument("--json", action="store_true", help="also emit JSON")
    common.add_argument("--trace", type=int, default=0, help="store k sample-path traces")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--dt", type=float, help="time step in minutes")

    ap = argparse.ArgumentParser(prog="cvarexec", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", parents=[common], help="theta_bar, a, b and the junction point")
    p.add_argument("--bracket", nargs=2, type=float, default=(0.1, 3.0), metavar=("LO", "HI"),
                   help="search interval for the first zero of Z_R")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("phi-table", parents=[common], help="tabulated phi as CSV")
    p.add_argument("--n-left", type=int, default=2048)
    p.add_argument("--n-right", type=int, default=2048)
    p.set_defaults(func=cmd_phi_table)

    for name, fn, what in (("value", cmd_value, "value function on an (x, q) grid"),
                           ("policy-eval", cmd_policy_eval, "f*, g* and V on an (x, q) grid")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("--x", help="comma-separated positions")
        p.add_argument("--q", help="comma-separated quantile levels")
        p.set_defaults(func=fn)

    p = sub.add_parser("compare", parents=[common], help="closed-form CVaR and improvement ratios")
    p.add_argument("--q", help="comma-separated quantile levels (default 0.01..0.99)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo shortfall statistics")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("frontier", parents=[common], help="mean/median frontier and tail curves")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_frontier)
    return ap


def main(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.trace < 0:
        ap.error("--trace: must be nonnegative")
    try:
        return args.func(args, _Sink(args.out, stdout))
    except ScenarioError as e:
        print(f"cvarexec {args.command}: invalid configuration: {e}", file=sys.stderr)
        return 2
    except phimod.MonotonicityError as e:
        print(f"cvarexec {args.command}: monotonicity check failed: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"cvarexec {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
