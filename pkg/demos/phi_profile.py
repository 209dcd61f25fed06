"""Shape of phi(q): constants, junction, residual and the two boundary laws."""

import numpy as np

from cvarexec.phi import build_phi_table, ef_residual, phi_ode_oracle

t = build_phi_table()
c = t.constants
print(f"theta_bar={c.theta_bar:.10f}  a={c.a:.10f}  b={c.b:.10f}")
print(f"junction q={c.junction_q:.6f} phi={c.junction_phi:.6f} slope={c.junction_slope:.6f}")
print(f"{len(t)} knots, interior range [{t.q_lo:.2e}, {1 - t.q_hi:.2e} from 1]")

q = np.linspace(0.05, 0.95, 19)
oracle = phi_ode_oracle(q)
print("\n     q       phi    phi/q   residual   |phi - bvp|")
for qi, v, o in zip(q, t(q), oracle):
    print(f"  {qi:.2f}  {v:.6f}  {v / qi:6.3f}  {ef_residual(qi, t):9.2e}  {abs(v - o):9.2e}")

# near 1: phi ~ (9/2)^(1/3) (1 - q)^(2/3); near 0: phi/q grows slowly (like -log q)
for s in (1e-2, 1e-4, 1e-6):
    print(f"1-q={s:.0e}: phi / law = {float(t(1 - s)) / ((4.5 * s * s) ** (1 / 3)):.6f}")
for qi in (1e-2, 1e-6, 1e-12, 1e-24):
    print(f"q={qi:.0e}: phi/q = {float(t(qi)) / qi:.3f}")
