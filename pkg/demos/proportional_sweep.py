"""Walk IEEE 30-bus up the PV curve and watch the index fall.

All loads and non-slack generation scale by the same factor. At every
resampled load factor each agent computes its index from neighbour phasors
only. The weakest bus should reach zero at the nose.

    python3 demos/proportional_sweep.py
"""
import numpy as np

from pmuvsi.harness import ScenarioConfig, ScenarioKind, run_scenario

res = run_scenario(ScenarioConfig(ScenarioKind.PROPORTIONAL))
s = res.summary
print(f"nose at lambda = {s['lambda_max']:.4f}")
print(f"weakest bus {s['critical_bus']}, |V| there = {s['v_critical_bus']:.4f} p.u.")

# a few PQ buses, thinned to every fifth grid point
watch = (14, 26, 29, 30)
lam, _ = res.series(watch[0])
keep = np.arange(0, len(lam), 5)
print("\n lambda " + "".join(f"  bus {b:2d}" for b in watch))
for k in keep:
    vals = [res.series(b)[1][k] for b in watch]
    print(f" {lam[k]:6.2f} " + "".join(f"  {v:6.3f}" for v in vals))

# fall is close to a straight line in lambda
r2 = s["r2"]
worst = min(r2, key=r2.get)
print(f"\nlinear fit R^2: median {np.median(list(r2.values())):.4f}, worst {r2[worst]:.4f} at bus {worst}")
