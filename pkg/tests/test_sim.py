import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvarexec.phi import PhiTable, default_table
from cvarexec.policy import AugmentedState, MarketParams, f_star, g_star
from cvarexec.risk import empirical_cvar, empirical_scvar, empirical_var
from cvarexec.rng import normals
from cvarexec.schedules import exp_optimal, vwap_optimal
from cvarexec.sim import (Frontier, PathError, SimConfig, _phi_lookup, _table_arrays, aggregate,
                          frontier, parse_policy, simulate_batch, simulate_path)

P = MarketParams(5.06, 1.56e3)


def cfg(**kw):
    base = dict(dt=1e-2, n_paths=64, master_seed=7, horizon_cap=600.0, chunk=16)
    base.update(kw)
    return SimConfig(**base)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(n_paths=0), dict(n_paths=2.5), dict(q_floor=0.0),
                                dict(q_floor=0.02), dict(completion_threshold=0.0),
                                dict(horizon_cap=-1.0), dict(workers=0), dict(chunk=0),
                                dict(master_seed=-1), dict(master_seed=2**64)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_input_validation():
    with pytest.raises(ValueError):
        simulate_batch(["opt"], 200.0, 0.5, P, cfg())  # beyond position bound
    with pytest.raises(ValueError):
        simulate_batch(["opt"], 1.0, 1.5, P, cfg())
    with pytest.raises(ValueError):
        simulate_batch(["opt"], 1.0, 1.0, P, cfg())  # adaptive needs interior q0
    with pytest.raises(ValueError):
        simulate_batch(["opt"], 0.005, 0.5, P, cfg())  # threshold not below |x0|
    with pytest.raises(ValueError):
        simulate_batch(["opt", "OPT"], 1.0, 0.5, P, cfg())
    with pytest.raises(ValueError):
        simulate_batch([], 1.0, 0.5, P, cfg())
    with pytest.raises(TypeError):
        simulate_batch(["opt"], 1.0, 0.5, (5.06, 1560.0), cfg())
    sched, _ = exp_optimal(2.0, 0.5, P)
    with pytest.raises(ValueError):
        simulate_batch([sched], 1.0, 0.5, P, cfg())


@pytest.mark.parametrize("bad", ["twap", "truncated(0)", "truncated(x)", 3, None])
def test_parse_policy_errors(bad):
    with pytest.raises(ValueError):
        parse_policy(bad)


def test_parse_policy_normalises():
    assert parse_policy(" OPT ") == "opt"
    assert parse_policy("Truncated(5)") == "truncated(5)"
    sched, _ = vwap_optimal(1.0, 0.5, P)
    assert parse_policy(sched) is sched


def test_zero_position_completes_immediately():
    r = simulate_batch(["opt", "exp", "vwap"], 0.0, 0.5, P, cfg(n_paths=4))
    for b in r.values():
        assert np.all(b.shortfall == 0.0)
        assert np.all(b.t50 == 0.0) and np.all(b.t95 == 0.0)
        assert np.all(b.steps == 0) and not b.capped.any()
        assert np.all(b.terminal_q == 0.5)


def test_zero_vol_exponential_cost():
    # schedule from the real market, run under (almost) no volatility: cost is pure impact
    sched, _ = exp_optimal(1.0, 0.5, P)
    quiet = MarketParams(1e-12, P.eta)
    r = simulate_path(sched, 1.0, 0.5, quiet, cfg(horizon_cap=3900.0), 0)
    expected = P.eta / (4.0 * sched.scale)
    thr = 1e-2
    assert not r.capped
    assert abs(r.shortfall / expected - 1.0) <= thr**2 + 1e-9
    # first time below 1/2 and 1/20 of the position
    assert r.completion_time_50 == pytest.approx(sched.scale * math.log(2.0), abs=0.011)
    assert r.completion_time_95 == pytest.approx(sched.scale * math.log(20.0), abs=0.011)


def test_zero_vol_vwap_cost():
    sched, _ = vwap_optimal(1.0, 0.5, P)
    quiet = MarketParams(1e-12, P.eta)
    r = simulate_path(sched, 1.0, 0.5, quiet, cfg(horizon_cap=3900.0), 0)
    # constant impact per traded unit; the path stops once less than the threshold is left
    traded = r.shortfall / (P.eta / (2.0 * sched.scale))
    dt, thr = 1e-2, 1e-2
    assert 1.0 - thr - 1e-9 <= traded <= 1.0 - thr + dt / sched.scale + 1e-9
    assert r.completion_time_50 == pytest.approx(sched.scale / 2.0, abs=0.011)


@pytest.mark.parametrize("name", ["opt", "exp", "vwap", "truncated(3)"])
def test_single_euler_step(name):
    """One step against a hand-written Euler update on the same normal."""
    dt, x0, q0 = 0.5, 1.0, 0.4
    c = cfg(dt=dt, horizon_cap=dt)
    r = simulate_path(name, x0, q0, P, c, 3)
    z = normals(c.master_seed, 3, 1)[0]
    dW = math.sqrt(dt) * z
    if name == "opt":
        f, g = f_star(AugmentedState(x0, q0), P), g_star(AugmentedState(x0, q0), P)
        cost = 0.5 * P.eta * f * f * dt - P.sigma * x0 * dW
        qT = min(max(q0 + g * dW, c.q_floor), 1 - c.q_floor)
    elif name == "truncated(3)":
        f, g = f_star(AugmentedState(x0, q0), P), g_star(AugmentedState(x0, q0), P)  # (x0, q0) lies inside A_3
        cost = 0.5 * P.eta * f * f * dt - P.sigma * x0 * dW
        qT = q0 + g * dW
    elif name == "exp":
        tau = exp_optimal(x0, q0, P)[0].scale
        x1 = x0 * math.exp(-dt / tau)
        cost = P.eta / (4 * tau) * (x0**2 - x1**2) - P.sigma * x0 * dW
        qT = q0
    else:
        T = vwap_optimal(x0, q0, P)[0].scale
        cost = 0.5 * P.eta * (x0 / T) ** 2 * dt - P.sigma * x0 * dW
        qT = q0
    assert r.steps == 1 and r.capped
    assert r.shortfall == pytest.approx(cost, rel=1e-8, abs=1e-12)
    assert r.terminal_q == pytest.approx(qT, rel=1e-8)


def test_reruns_are_bit_identical():
    a = simulate_batch(["opt", "exp", "vwap"], 1.0, 0.5, P, cfg())
    b = simulate_batch(["opt", "exp", "vwap"], 1.0, 0.5, P, cfg())
    for k in a:
        for f in ("shortfall", "t50", "t95", "terminal_q", "capped", "steps", "sum_wq"):
            np.testing.assert_array_equal(getattr(a[k], f), getattr(b[k], f))
    c = simulate_batch(["opt"], 1.0, 0.5, P, cfg(master_seed=8))
    assert not np.array_equal(a["opt"].shortfall, c["opt"].shortfall)


def test_workers_do_not_change_results():
    one = simulate_batch(["opt", "exp"], 1.0, 0.3, P, cfg(workers=1, chunk=64))
    many = simulate_batch(["opt", "exp"], 1.0, 0.3, P, cfg(workers=8, chunk=5))
    for k in one:
        np.testing.assert_array_equal(one[k].shortfall, many[k].shortfall)
        np.testing.assert_array_equal(one[k].terminal_q, many[k].terminal_q)


def test_policy_set_does_not_change_paths():
    # each policy reads the same stream, so adding policies leaves the others untouched
    alone = simulate_batch(["vwap"], 1.0, 0.5, P, cfg())
    mixed = simulate_batch(["opt", "exp", "vwap"], 1.0, 0.5, P, cfg())
    np.testing.assert_array_equal(alone["vwap"].shortfall, mixed["vwap"].shortfall)


def test_single_path_matches_batch_row():
    c = cfg(n_paths=6)
    batch = simulate_batch(["opt", "exp"], 1.0, 0.5, P, c)
    for i in (0, 5):
        for k in ("opt", "exp"):
            r = simulate_path(k, 1.0, 0.5, P, c, i)
            assert r == batch[k][i]
    one = simulate_batch(["opt"], 1.0, 0.5, P, cfg(n_paths=1))["opt"][0]
    assert one == simulate_path("opt", 1.0, 0.5, P, cfg(n_paths=1), 0)


def test_traces_respect_invariants():
    c = cfg(dt=0.05, horizon_cap=3900.0, n_paths=6)
    r = simulate_batch(["opt", "exp"], 1.0, 0.5, P, c, trace=6)
    opt = r["opt"]
    for i in range(6):
        tr = opt.traces[i]
        assert 2 <= tr.shape[0] <= 2000
        np.testing.assert_array_equal(tr[0], [0.0, 1.0, 0.5, 0.0])
        t, x, q, cost = tr.T
        assert np.all(np.diff(t) > 0)
        assert np.all(np.diff(x) <= 0.0)  # no buying back
        assert np.all((q >= c.q_floor) & (q <= 1 - c.q_floor))
        res = opt[i]
        assert res.trace is tr
        assert cost[-1] == res.shortfall and q[-1] == res.terminal_q
        assert t[-1] == pytest.approx(res.steps * c.dt)
        assert res.capped or abs(x[-1]) < c.completion_threshold
    ex = r["exp"].traces[0]
    assert np.all(ex[:, 2] == 0.5)
    assert 7 not in opt.traces


def test_long_trace_is_downsampled():
    c = cfg(dt=1e-3, n_paths=1, horizon_cap=50.0)
    r = simulate_path("vwap", 1.0, 0.5, P, c, 0, trace=True)
    assert r.steps == 50000
    assert r.trace.shape[0] <= 2000
    assert r.trace[-1, 0] == pytest.approx(50.0)
    assert r.trace[-1, 3] == r.shortfall


def test_short_paths_complete():
    c = cfg(dt=1e-2, horizon_cap=3900.0, n_paths=32)
    r = simulate_batch(["exp", "vwap"], 1.0, 0.5, P, c)
    for b in r.values():
        assert not b.capped.any()
        assert np.all(b.t50 <= b.t95)
    T = vwap_optimal(1.0, 0.5, P)[0].scale
    # vwap leaves less than the threshold one step before its horizon
    assert np.all(np.abs(r["vwap"].steps * c.dt - T * (1 - c.completion_threshold)) <= 2 * c.dt)


def test_common_random_numbers_correlate():
    c = cfg(dt=2e-2, n_paths=1000, horizon_cap=3900.0)
    shared = simulate_batch(["exp", "vwap"], 1.0, 0.5, P, c)
    rho = np.corrcoef(shared["exp"].shortfall, shared["vwap"].shortfall)[0, 1]
    other = simulate_batch(["vwap"], 1.0, 0.5, P, SimConfig(**{**c.__dict__, "master_seed": 99}))
    rho_ind = np.corrcoef(shared["exp"].shortfall, other["vwap"].shortfall)[0, 1]
    assert rho > 0.9
    assert abs(rho_ind) < 0.15


def test_aim_correlation_negative():
    c = cfg(dt=2e-2, n_paths=200, horizon_cap=600.0)
    b = simulate_batch(["opt", "exp"], 1.0, 0.5, P, c)
    assert b["opt"].aim_correlation() < -0.1
    assert b["exp"].aim_correlation() == 0.0


def test_truncated_policy_freezes_outside_region():
    c = cfg(dt=0.05, horizon_cap=3900.0, n_paths=4)
    r = simulate_batch(["truncated(3)"], 1.0, 0.5, P, c, trace=4)["truncated(3)"]
    for i in range(4):
        tr = r.traces[i]
        x, q = tr[:, 1], tr[:, 2]
        inside = (np.abs(x) > 1 / 3) & (q > 1 / 3) & (q < 2 / 3)
        out = np.flatnonzero(~inside)
        assert out.size
        k = out[0]
        assert np.all(q[k:] == q[k])  # g_n vanishes once the state leaves A_n
        assert not r.capped[i]


def test_martingale_small():
    c = cfg(dt=2e-2, n_paths=400, horizon_cap=300.0, master_seed=3)
    b = simulate_batch(["opt"], 1.0, 0.3, P, c)["opt"]
    qT = b.terminal_q
    se = qT.std(ddof=1) / math.sqrt(qT.size)
    assert abs(qT.mean() - 0.3) < 4 * se


def test_nonfinite_state_raises_path_error():
    t = default_table()
    bad = PhiTable(t.constants, t.knots, np.full_like(t.values, np.nan), t.slopes, t.branch, t.theta)
    with pytest.raises(PathError) as e:
        simulate_batch(["exp", "opt"], 1.0, 0.5, P, cfg(n_paths=3), table=bad)
    assert e.value.path_index == 0 and e.value.policy == "opt"
    assert e.value.trace is not None and e.value.trace.shape[1] == 4
    with pytest.raises(PathError):
        simulate_path("opt", 1.0, 0.5, P, cfg(), 2, table=bad)


@given(st.floats(1e-30, 1.0 - 1e-12))
def test_kernel_lookup_matches_table(q):
    t = default_table()
    K, V, D, bucket = _table_arrays(t)
    assert _phi_lookup(q, K, V, D, bucket) == pytest.approx(float(t(q)), rel=1e-13, abs=1e-300)


def test_kernel_lookup_at_knots():
    t = default_table()
    arrs = _table_arrays(t)
    inner = t.knots[(t.knots >= t.q_lo) & (t.knots <= t.q_hi)][::7]
    got = np.array([_phi_lookup(v, *arrs) for v in inner])
    np.testing.assert_allclose(got, t(inner), rtol=1e-13)


def test_aggregate_consistency():
    b = simulate_batch(["opt"], 1.0, 0.5, P, cfg(n_paths=200))["opt"]
    s = aggregate(b, 0.5)
    c = b.shortfall
    assert s.cvar == pytest.approx(empirical_scvar(c, 0.5) / 0.5, rel=1e-12)
    assert s.cvar == empirical_cvar(c, 0.5) and s.var == empirical_var(c, 0.5)
    assert s.mean == pytest.approx(c.mean()) and s.median == np.median(c)
    assert s.n == 200 and s.mc_stderr_cvar > 0
    assert s.capped_fraction == pytest.approx(b.capped.mean())
    # list form agrees with the column form
    s2 = aggregate(list(b), 0.5)
    assert s2.cvar == s.cvar and s2.avg_time_95 == s.avg_time_95
    with pytest.raises(ValueError):
        aggregate([], 0.5)


def test_aggregate_single_path():
    s = aggregate(simulate_batch(["exp"], 1.0, 0.5, P, cfg(n_paths=1))["exp"], 0.5)
    assert s.n == 1 and s.std == 0.0 and math.isnan(s.mc_stderr_cvar)


def test_frontier_tail_is_pointwise_min():
    rng = np.random.default_rng(0)
    samples = {"a": {0.1: rng.normal(10, 1, 500), 0.5: rng.normal(8, 3, 500)}}
    fr = frontier(samples, thresholds=np.linspace(0, 20, 41))
    tail = fr.min_tail["a"]
    assert np.all(np.diff(tail) <= 0)
    for v in samples["a"].values():
        assert np.all(tail <= np.mean(v[:, None] > fr.thresholds, axis=0) + 1e-15)
    assert fr.points["a"].shape == (2, 3)


def test_frontier_single_q_collapses():
    c = np.arange(10.0)
    fr = frontier({"a": {0.5: c}, "b": {0.5: c + 1}})
    np.testing.assert_allclose(fr.points["a"], [[0.5, 4.5, 4.5]])
    # means outside the other family's (single point) range give nan
    assert np.isnan(fr.median_gain("a", "b")).all()
    with pytest.raises(ValueError):
        frontier({"a": {}}, thresholds=[0.0])


def test_median_gain_sign():
    a = np.array([[0.1, 1.0, 0.5], [0.5, 2.0, 1.5]])
    b = np.array([[0.1, 0.5, 1.0], [0.5, 3.0, 3.0]])
    f = Frontier({"a": a, "b": b}, np.zeros(1), {})
    gain = f.median_gain("a", "b")
    assert np.all(gain > 0)
