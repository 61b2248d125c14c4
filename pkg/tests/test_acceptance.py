"""Acceptance criteria, one check each.

Every check prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers and then asserts. Run ``python3 tests/test_acceptance.py`` for the
report alone.
"""
from __future__ import annotations

import functools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from pmuvsi.agents import make_agents, step_all, synthesize_measurements
from pmuvsi.casefile import load_case
from pmuvsi.circlevsi import (
    CircleGeometry,
    Intersection,
    bus_circles,
    circle_matrix,
    classify_intersection,
    delta_components,
    delta_star_geometric,
    pencil_determinant,
)
from pmuvsi.harness import ScenarioConfig, ScenarioKind, run_scenario
from pmuvsi.netmodel import BusKind, build_admittance, scale_loads
from pmuvsi.powerflow import continuation_power_flow

N_PAIRS = 20_000


def report(number: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {text}"
    capman = getattr(report, "capman", None)
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)


@pytest.fixture(autouse=True)
def _uncaptured(request):
    report.capman = request.config.pluginmanager.getplugin("capturemanager")
    yield
    report.capman = None


@functools.lru_cache(maxsize=None)
def scenario(kind: str, **kw):
    t0 = time.perf_counter()
    res = run_scenario(ScenarioConfig(ScenarioKind(kind), **kw))
    res.timing["wall_s"] = time.perf_counter() - t0
    return res


def proportional():
    return scenario("proportional")


def directional():
    return scenario("directional")


# -- quantitative --------------------------------------------------------------


def check_1():
    s = proportional().summary
    t = proportional().timing["wall_s"]
    ok = (2.7 <= s["lambda_max"] <= 2.9 and s["critical_bus"] == 30
          and 0.46 <= s["v_critical_bus"] <= 0.56 and t < 30)
    return ok, (f"proportional lambda_max={s['lambda_max']:.4f} (want [2.7, 2.9]), critical bus "
                f"{s['critical_bus']} (want 30), |V30|={s['v_critical_bus']:.4f} (want [0.46, 0.56]), {t:.1f}s (< 30s)")


def check_2():
    res = proportional()
    lam, v = res.series(30)
    at_max, at_zero = v[-1], v[lam == 0.0]
    ok = at_max < 0.05 and len(at_zero) == 1 and at_zero[0] == 1.0
    return ok, f"VSI(30) at lambda_max={at_max:.4f} (want < 0.05), at lambda=0 {float(at_zero[0])!r} (want exactly 1.0)"


def check_3():
    s = directional().summary
    return 1.5 <= s["lambda_max"] <= 1.7, f"directional (17-30) lambda_max={s['lambda_max']:.4f} (want [1.5, 1.7])"


def check_4():
    s = scenario("noise", sigma_v=0.001, sigma_theta=0.01, seed=2024, realizations=1000).summary
    ok = s["std_ratio"] <= 0.2 and 0.001 <= s["std_vsi"] <= 0.02
    return ok, (f"noise at bus {s['bus']}: std(VSI)={s['std_vsi']:.4f} (want [0.001, 0.02]), "
                f"std(LTI)={s['std_lti']:.4f}, ratio={s['std_ratio']:.3f} (want <= 0.2)")


def check_5():
    s = scenario("outage").summary
    gaps = s["max_relative_gap"]
    worst = max(gaps.values())
    ok = s["all_monitored_drop"] and s["localized_bus"] == 15 and worst < 0.10
    drops = ", ".join(f"{b}:{d:+.4f}" for b, d in s["drop"].items())
    return ok, (f"outage 15-23 at t=138: drops [{drops}] (want all > 0), localized bus "
                f"{s['localized_bus']} (want 15), max stale/refreshed gap {worst:.3f} (want < 0.10)")


def check_6():
    s = scenario("three-bus", case="three_bus").summary
    final_vsi = s["final_vsi"]
    ok = (s["classifications"][-1] == "OnePoint" and final_vsi is not None and final_vsi < 0.02
          and s["r_q_decreasing"] and s["r_p_increasing"])
    return ok, (f"3-bus sequence {s['classifications']}, final VSI={final_vsi} (want OnePoint, < 0.02), "
                f"r_q decreasing={s['r_q_decreasing']}, r_p increasing={s['r_p_increasing']}")


# -- properties ----------------------------------------------------------------


def random_pairs(n: int, seed: int):
    """Free pairs mixed with exact external/internal tangencies and concentric pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        a = CircleGeometry(tuple(rng.uniform(-10, 10, 2)), float(rng.uniform(0.01, 10)))
        rb = float(rng.uniform(0.01, 10))
        mode = ("free", "free", "outer", "inner", "concentric")[k % 5]
        d = {"free": rng.uniform(0, 25), "outer": a.radius + rb, "inner": abs(a.radius - rb), "concentric": 0.0}[mode]
        ang = rng.uniform(0, 2 * math.pi)
        b = CircleGeometry((a.center[0] + d * math.cos(ang), a.center[1] + d * math.sin(ang)), rb)
        out.append((mode, a, b))
    return out


def check_7():
    bad = tested = 0
    for mode, a, b in random_pairs(N_PAIRS, 7):
        d = abs(a.gamma - b.gamma)
        lo, hi = abs(a.radius - b.radius), a.radius + b.radius
        margin = min(abs(d - hi), abs(d - lo)) / max(1.0, hi)
        if mode == "free" and margin < 1e-6:
            continue  # too close to tangency for an exact-sign claim
        if mode == "concentric" and lo < 1e-6:
            continue
        ds = delta_components(circle_matrix(a), circle_matrix(b)).delta_star
        cls = classify_intersection(a, b)
        # Delta* = (hi^2 - d^2)(d^2 - lo^2)/4; scale by the same factors with plus signs,
        # plus the rounding floor of matrix entries that grow like |gamma|^2
        floor = 64 * np.finfo(float).eps * (abs(a.gamma) ** 2 + abs(b.gamma) ** 2 + a.radius**2 + b.radius**2) ** 2
        zero = abs(ds) < 1e-9 * (hi**2 + d**2) * (d**2 + lo**2) / 4 + floor
        if zero:
            good = cls is Intersection.ONE_POINT
        elif ds > 0:
            good = cls is Intersection.TWO_POINTS
        else:
            good = cls is Intersection.NONE
        tested += 1
        bad += not good
    return bad == 0 and tested >= 10_000, f"sign of Delta* vs geometry: {bad} mismatches over {tested} pairs (want 0, >= 10^4)"


def check_8():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _, a, b in random_pairs(N_PAIRS, 8):
        cp, cq = circle_matrix(a), circle_matrix(b)
        comp = delta_components(cp, cq)
        l1, l2 = rng.uniform(-10, 10, 2)
        direct = pencil_determinant(cp, cq, l1, l2)
        form = comp.delta_p * l1**2 + comp.delta_q * l2**2 + 2 * comp.delta_pq * l1 * l2
        scale = (abs(l1) * np.abs(cp.as_array()).max() + abs(l2) * np.abs(cq.as_array()).max()) ** 2
        worst = max(worst, abs(direct - form) / max(1.0, scale))
    return worst <= 1e-9, f"pencil determinant vs quadratic form: worst relative error {worst:.2e} (want <= 1e-9)"


def check_9():
    worst_id = worst_geo = 0.0
    for _, a, b in random_pairs(N_PAIRS, 9):
        comp = delta_components(circle_matrix(a), circle_matrix(b))
        sa = a.radius**2 + abs(a.gamma) ** 2
        sb = b.radius**2 + abs(b.gamma) ** 2
        worst_id = max(worst_id, abs(comp.delta_p + a.radius**2) / sa, abs(comp.delta_q + b.radius**2) / sb)
        d2 = abs(a.gamma - b.gamma) ** 2
        scale = (a.radius**2 + b.radius**2 + d2 + sa + sb) ** 2
        worst_geo = max(worst_geo, abs(comp.delta_star - delta_star_geometric(a, b)) / scale)
    ok = worst_id <= 1e-9 and worst_geo <= 1e-9
    return ok, f"Delta_p=-r_p^2, Delta_q=-r_q^2 worst {worst_id:.2e}; closed form worst {worst_geo:.2e} (want <= 1e-9)"


def check_10():
    case = load_case("case_ieee30")
    Y = build_admittance(case)
    worst, n = 0.0, 0
    for traj in (continuation_power_flow(case), continuation_power_flow(case, load_buses=range(17, 31))):
        for lam, snap in traj.points:
            now = scale_loads(case, lam, traj.load_buses)
            volts = snap.as_dict()
            for b in now.buses:
                if b.kind is not BusKind.PQ or b.id == 9:  # bus 9 has a lossless row
                    continue
                gp, gq = bus_circles(now, b.id, volts, b.p_inj, b.q_inj, Y)
                worst = max(worst, abs(gp.residual(volts[b.id])), abs(gq.residual(volts[b.id])))
                n += 1
    return worst < 1e-7, f"solution on both circles: worst distance {worst:.2e} over {n} (snapshot, bus) pairs (want < 1e-7)"


def check_11():
    case = load_case("case_ieee30")
    Y = build_admittance(case)
    agents = make_agents(case, Y)
    traj = continuation_power_flow(case)
    rng = np.random.default_rng(11)
    changed = total = 0
    for lam, snap in traj.points:
        now = scale_loads(case, lam)
        meas = synthesize_measurements(snap)
        clean = step_all(agents, now, meas)
        for d, a in agents.items():
            near = set(a.neighbors)
            junk = {b: (m if b in near else type(m)(b, complex(*rng.normal(0, 5, 2)), m.timestamp)) for b, m in meas.items()}
            r = step_all({d: a}, now, junk)[d]
            same = r.flag == clean[d].flag and (
                r.value == clean[d].value or (math.isnan(r.value) and math.isnan(clean[d].value)))
            changed += not same
            total += 1
    return changed == 0, f"non-neighbour voltages corrupted: {changed} of {total} agent outputs changed (want 0)"


def check_12():
    diffs = []
    with tempfile.TemporaryDirectory() as tmp:
        for kind, kw in (("proportional", dict(sigma_v=0.001, sigma_theta=0.01)), ("noise", dict(sigma_v=0.001, sigma_theta=0.01, realizations=100))):
            files = []
            for rep in range(2):
                out = Path(tmp) / f"{kind}{rep}"
                run_scenario(ScenarioConfig(ScenarioKind(kind), seed=99, out_dir=str(out), **kw))
                files.append(sorted(out.iterdir()))
            for f1, f2 in zip(*files):
                if f1.read_bytes() != f2.read_bytes():
                    diffs.append(f1.name)
    return not diffs, f"same seed twice: differing files {diffs} (want none)"


def check_13():
    parts = []
    ok = True
    for name, res in (("proportional", proportional()), ("directional", directional())):
        r2 = res.summary["r2"]
        bus = min(r2, key=r2.get)
        ok &= r2[bus] >= 0.95
        parts.append(f"{name} min R^2={r2[bus]:.4f} at bus {bus}")
    return ok, "; ".join(parts) + " (want >= 0.95 at every bus)"


CHECKS = {n: globals()[f"check_{n}"] for n in range(1, 14)}


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number):
    ok, text = CHECKS[number]()
    report(number, ok, text)
    assert ok, text


if __name__ == "__main__":
    failed = 0
    for n, check in CHECKS.items():
        ok, text = check()
        report(n, ok, text)
        failed += not ok
    sys.exit(1 if failed else 0)
