"""Closed-form CVaR of the adaptive strategy and the two optimized schedules.

Desk parameters: sigma = 5.06 bp/sqrt(min), eta = 1560 bp min, one unit of inventory.
"""

import numpy as np

from cvarexec import AugmentedState, MarketParams, exp_optimal, f_star, g_star, ratios, value_function, vwap_optimal

p = MarketParams(5.06, 1.56e3)

print("   q      opt      exp     vwap   opt/exp-1  tau*(min)  T*(min)")
for q in (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99):
    opt = value_function(AugmentedState(1.0, q), p) / q
    es, ev = exp_optimal(1.0, q, p)
    vs, vv = vwap_optimal(1.0, q, p)
    print(f"{q:5.2f}  {opt:7.3f}  {ev / q:7.3f}  {vv / q:7.3f}  {ratios(q)[0]:9.4f}  {es.scale:9.1f}  {vs.scale:7.1f}")
print(f"exp vs vwap ratio is flat at {ratios(0.5)[2]:.6f}")

# g* < 0: q falls after favourable moves, and f* speeds up as q falls
print("\n   x     q    f* (units/min)   g*")
for x in (1.0, 0.5, 0.1):
    for q in (0.2, 0.5, 0.8):
        s = AugmentedState(x, q)
        print(f"{x:4.1f}  {q:4.1f}  {f_star(s, p):12.5f}  {g_star(s, p):9.5f}")

x = np.linspace(0.1, 1.0, 4)
print("\nV(x, 0.5) / x^(4/3):", np.round([value_function(AugmentedState(v, 0.5), p) / v ** (4 / 3) for v in x], 10))
