"""Trip line 15-23 during a slow load ramp.

Two runs share the same measurements. In the stale run the agents keep the
pre-outage admittance rows; in the refreshed run they learn the new topology
at the trip. The step in each series at the trip sample shows where the
outage hurts most.

    python3 demos/line_outage.py
"""
from pmuvsi.harness import ScenarioConfig, ScenarioKind, run_scenario

stale = run_scenario(ScenarioConfig(ScenarioKind.LINE_OUTAGE))
fresh = stale.companions["refreshed"]
s = stale.summary

print("bus   drop    excess   stale/refreshed gap")
for b in sorted(s["drop"]):
    print(f"{b:3d}  {s['drop'][b]:+.4f}  {s['excess_drop'][b]:+.4f}  {s['max_relative_gap'][b]:.3f}")
print(f"\nlargest excess drop at bus {s['localized_bus']}")

t, v = stale.series(15)
_, w = fresh.series(15)
print("\n  t    stale  refreshed  (bus 15)")
for k in range(130, 150, 2):
    print(f"{t[k]:4.0f}  {v[k]:6.3f}  {w[k]:6.3f}")
