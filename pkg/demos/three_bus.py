"""The small three-bus illustration, point by point.

Five injection settings at buses 2 and 3 are applied as given. For each we
report the circle radii at bus 3, how the P and Q circles meet, and the
index. Settings beyond the network's loadability have no power-flow
solution; for those only the loadability along their own direction is shown.

    python3 demos/three_bus.py
"""
from pmuvsi.harness import ScenarioConfig, ScenarioKind, run_scenario

s = run_scenario(ScenarioConfig(ScenarioKind.THREE_BUS, case="three_bus")).summary


def fmt(x):
    return "     -" if x is None else f"{x:6.3f}"


print(" #  injection       r_p     r_q    circles      VSI   loadability")
for p in s["points"]:
    re, im = p["injection"]
    print(f" {p['index']}  {re:+.2f}{im:+.2f}j  {fmt(p.get('p_radius'))}  {fmt(p.get('q_radius'))}"
          f"  {p['classification']:<10s}  {fmt(p.get('vsi'))}  {fmt(p.get('loadability'))}")
