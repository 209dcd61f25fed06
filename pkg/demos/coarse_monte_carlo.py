"""A coarse Monte Carlo (dt = 0.01 min, 4000 paths) of the three strategies at q = 0.5.

The desk run in the acceptance suite uses dt = 1e-3 and 20k paths; this one
finishes in about a minute and already shows the main features: simulated CVaR
close to the closed forms, OPT trading a higher mean for a lower median, and a
negative correlation between price moves and quantile moves.
"""

import time

from cvarexec import AugmentedState, MarketParams, SimConfig, aggregate, simulate_batch, value_function
from cvarexec.schedules import exp_optimal, vwap_optimal

p = MarketParams(5.06, 1.56e3)
q = 0.5
cfg = SimConfig(dt=1e-2, n_paths=4000, master_seed=2024)

t0 = time.perf_counter()
runs = simulate_batch(["opt", "exp", "vwap"], 1.0, q, p, cfg, trace=1)
print(f"{cfg.n_paths} paths in {time.perf_counter() - t0:.1f} s")

theo = {"opt": value_function(AugmentedState(1.0, q), p) / q,
        "exp": exp_optimal(1.0, q, p)[1] / q,
        "vwap": vwap_optimal(1.0, q, p)[1] / q}
print("policy   cvar (theo)        mean  median   t50   t95  capped")
for name, b in runs.items():
    s = aggregate(b, q)
    print(f"{name:5s}  {s.cvar:6.2f} ({theo[name]:6.2f})  {s.mean:6.2f}  {s.median:6.2f}"
          f"  {s.avg_time_50:4.0f}  {s.avg_time_95:4.0f}  {s.capped_fraction:.3f}")

opt = runs["opt"]
print(f"\ncorr(dW, dQ) under opt: {opt.aim_correlation():.3f}")
print(f"mean terminal Q: {opt.terminal_q.mean():.4f} (q0 = {q})")
tr = opt.traces[0]
print(f"path 0: {tr.shape[0]} trace rows, finished at t={tr[-1, 0]:.1f} min with Q={tr[-1, 2]:.4f}")
