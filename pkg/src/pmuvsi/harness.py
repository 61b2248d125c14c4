"""Scenario orchestration: load sweeps, noise study, line outage, 3-bus example.

Every ``run_*`` function returns a :class:`~pmuvsi.results.ScenarioResult`
whose long-form table has one row per (time or load factor, bus) and whose
summary is plain JSON. Wall-clock timings go to ``result.timing`` so the
written files stay byte-identical between runs.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .agents import (
    AdmittanceRefresh,
    EventTimeline,
    LineOutage,
    LoadRamp,
    NoiseModel,
    _lti_values,
    make_agents,
    run_timeline,
    step_all,
    synthesize_measurements,
)
from .baselines import RankDeficientWindowError, estimate_thevenin, lti_index
from .casefile import load_case
from .circlevsi import (
    bus_circles,
    circle_matrix,
    classify_intersection,
    delta_components,
)
from .errors import ConvergenceError, InfeasibleCircleError
from .netmodel import BusKind, NetworkCase, build_admittance, scale_loads
from .powerflow import (
    PhasorSnapshot,
    continuation_power_flow,
    lowest_voltage_bus,
    resample,
    solve_power_flow,
)
from .results import Row, ScenarioResult

log = logging.getLogger(__name__)

PQ_FLAGS = ("ok", "negative")
THREE_BUS_LOADS = (-0.01 + 0.33j, -0.04 + 0.40j, -0.13 + 0.44j, -0.28 + 0.45j, -0.49 + 0.43j)


class ScenarioKind(enum.Enum):
    PROPORTIONAL = "proportional"
    DIRECTIONAL = "directional"
    NOISE_STUDY = "noise"
    LINE_OUTAGE = "outage"
    THREE_BUS = "three-bus"


@dataclass(frozen=True)
class ScenarioConfig:
    """Inputs of one scenario run. Unused fields are ignored by other kinds."""

    kind: ScenarioKind
    case: str = "case_ieee30"
    seed: int = 0
    out_dir: str | None = None
    # load sweeps
    lambda_max: float | None = None
    lambda_grid_step: float = 0.05
    load_buses: tuple[int, ...] | None = None
    enforce_q_limits: bool = False
    reference: str = "solved"
    # noise
    sigma_v: float = 0.0
    sigma_theta: float = 0.0
    realizations: int = 1000
    lambda0: float = 1.0
    load_step: float = 0.01
    lti_window: int = 10
    # timelines
    monitored: tuple[int, ...] | None = None
    outage: tuple[int, int] = (15, 23)
    outage_time: float = 138.0
    refresh_at: float | None = None
    ramp: tuple[float, float, float, float] = (0.0, 200.0, 1.0, 2.0)
    sample_rate: float = 1.0

    def __post_init__(self):
        if self.lambda_grid_step <= 0:
            raise ValueError("lambda grid step must be positive")
        if self.realizations < 1:
            raise ValueError("need at least one noise realization")
        if self.lti_window < 2:
            raise ValueError("LTI window must hold at least two samples")

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma_v, self.sigma_theta, self.seed)


def _argmin_bus(values: dict[int, float]) -> int | None:
    finite = [(v, b) for b, v in values.items() if np.isfinite(v)]
    return min(finite)[1] if finite else None


def linear_r2(x: np.ndarray, y: np.ndarray) -> float:
    """Coefficient of determination of a straight-line fit."""
    ok = np.isfinite(y)
    x, y = np.asarray(x)[ok], np.asarray(y)[ok]
    if len(x) < 3:
        return math.nan
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0
    coef = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - np.polyval(coef, x)) ** 2))
    return 1.0 - ss_res / ss_tot


def _sweep(config: ScenarioConfig, name: str, load_buses) -> ScenarioResult:
    case = load_case(config.case)
    t0 = time.perf_counter()
    traj = continuation_power_flow(
        case,
        load_buses=load_buses,
        lambda_stop=config.lambda_max,
        enforce_q_limits=config.enforce_q_limits,
    )
    t_cpf = time.perf_counter() - t0
    grid = np.arange(0.0, traj.lambda_max, config.lambda_grid_step)
    if not config.enforce_q_limits:
        traj = resample(traj, case, grid)
    Y = build_admittance(case)
    agents = make_agents(case, Y, reference=config.reference)
    noise = config.noise
    rows, history = [], {}
    report = sorted(agents)
    final = {}
    for n, (lam, snap) in enumerate(traj.points):
        now = scale_loads(case, lam, load_buses)
        meas = synthesize_measurements(snap.replace(time=float(n)), noise)
        res = step_all(agents, now, meas)
        ltis = _lti_values(history, Y.Y, meas, case.index, report, config.lti_window)
        last = n == len(traj.points) - 1
        for b in report:
            rows.append(Row(lam, b, res[b].value, ltis[b], res[b].flag, "nose" if last else ""))
        if last:
            final = {b: r.value for b, r in res.items() if r.flag in PQ_FLAGS}
    result = ScenarioResult(name, rows)
    lams = traj.lambdas
    r2 = {}
    for b in report:
        _, y = result.series(b)
        flags = {r.flag for r in rows if r.bus == b}
        if flags <= set(PQ_FLAGS):
            r2[b] = linear_r2(lams, y)
    nose = traj.nose
    crit_v_bus, v_min = lowest_voltage_bus(nose)
    critical = _argmin_bus(final)
    result.summary = {
        "scenario": name,
        "case": case.name,
        "lambda_max": traj.lambda_max,
        "critical_bus": critical,
        "critical_vsi": final.get(critical, math.nan),
        "lowest_voltage_bus": crit_v_bus,
        "lowest_voltage": v_min,
        "v_critical_bus": float(abs(nose[critical])) if critical is not None else None,
        "final_vsi": final,
        "r2": r2,
        "min_r2": min((v for v in r2.values() if np.isfinite(v)), default=math.nan),
        "load_buses": None if load_buses is None else sorted(load_buses),
        "degenerate_buses": sorted({r.bus for r in rows if r.flag == "degenerate"}),
        "n_points": len(traj.points),
        "enforce_q_limits": config.enforce_q_limits,
        "reference": config.reference,
        "seed": config.seed,
    }
    result.timing = {"cpf_s": t_cpf, "total_s": time.perf_counter() - t0}
    return result


def run_proportional(config: ScenarioConfig) -> ScenarioResult:
    """All loads and non-slack generation scaled together from zero to the nose."""
    return _sweep(config, "proportional", None)


def run_directional(config: ScenarioConfig) -> ScenarioResult:
    """Only the loads in ``config.load_buses`` (default 17..30) grow from zero."""
    buses = tuple(range(17, 31)) if config.load_buses is None else tuple(config.load_buses)
    if not buses:
        raise ValueError("nothing scaled: the directional load set is empty")
    return _sweep(config, "directional", buses)


def run_noise_study(config: ScenarioConfig) -> ScenarioResult:
    """Spread of both indices under PMU noise at a fixed operating point.

    The LTI needs a window of distinct operating points, so the true state
    moves along a short ramp (``load_step`` per sample) ending at
    ``lambda0``. Each realization redraws the noise on all samples of the
    window; both indices are read at the last sample.
    """
    case = load_case(config.case)
    Y = build_admittance(case)
    bus = (config.monitored or (30,))[0]
    if case.bus(bus).kind is BusKind.SLACK:
        raise ValueError("the slack bus has no index")
    W = config.lti_window
    lams = config.lambda0 + config.load_step * (np.arange(W) - (W - 1))
    if lams[0] < 0:
        raise ValueError("noise window would start below zero load")
    snaps, v = [], None
    for lam in lams:
        init = None if v is None else PhasorSnapshot(case.bus_ids, v)
        s = solve_power_flow(scale_loads(case, lam), init, Y=Y)
        v = s.v
        snaps.append(s)
    now = scale_loads(case, lams[-1])
    agents = make_agents(case, Y, reference=config.reference, buses=[bus])
    local = sorted(Y.neighbors(bus) | {bus})
    d = case.index[bus]
    row_y = {k: Y.Y[d, case.index[k]] for k in local}
    noise = config.noise
    rows = []
    vsis, ltis = [], []
    t0 = time.perf_counter()
    for r in range(config.realizations):
        samples = []
        for k, s in enumerate(snaps):
            meas = synthesize_measurements(s.replace(time=float(r * W + k)), noise, local)
            i_load = -sum(row_y[k2] * meas[k2].voltage for k2 in local)
            samples.append((meas[bus].voltage, complex(i_load)))
        res = step_all(agents, now, meas)[bus]
        try:
            lti = lti_index(estimate_thevenin(samples), *samples[-1])
        except RankDeficientWindowError:
            lti = math.nan
        vsis.append(res.value)
        ltis.append(lti)
        rows.append(Row(float(r), bus, res.value, lti, res.flag))
    vsis, ltis = np.array(vsis), np.array(ltis)
    std_v, std_l = float(np.nanstd(vsis)), float(np.nanstd(ltis))
    result = ScenarioResult("noise", rows)
    result.summary = {
        "scenario": "noise",
        "case": case.name,
        "bus": bus,
        "lambda0": config.lambda0,
        "realizations": config.realizations,
        "sigma_v": config.sigma_v,
        "sigma_theta_deg": config.sigma_theta,
        "window": W,
        "load_step": config.load_step,
        "mean_vsi": float(np.nanmean(vsis)),
        "mean_lti": float(np.nanmean(ltis)),
        "std_vsi": std_v,
        "std_lti": std_l,
        "std_ratio": std_v / std_l if std_l > 0 else (0.0 if std_v == 0 else math.inf),
        "seed": config.seed,
    }
    result.timing = {"total_s": time.perf_counter() - t0}
    return result


def _drops(res: ScenarioResult, buses, t_out: float, dt: float) -> tuple[dict, dict]:
    """Raw one-sample drop at the outage and the drop in excess of the prior trend."""
    raw, excess = {}, {}
    for b in buses:
        t, v = res.series(b)
        lookup = dict(zip(np.round(t, 9), v))
        a, p, o = (lookup.get(round(t_out - k * dt, 9), math.nan) for k in (2, 1, 0))
        raw[b] = p - o
        excess[b] = (p - o) - (a - p)
    return raw, excess


def run_line_outage(config: ScenarioConfig) -> ScenarioResult:
    """Load ramp with a branch outage; stale and refreshed agents side by side.

    The main table holds the stale-admittance series; the refreshed series
    is attached as the ``refreshed`` companion table.
    """
    case = load_case(config.case)
    t_out = config.outage_time
    refresh = t_out if config.refresh_at is None else config.refresh_at
    monitored = tuple(config.monitored or (14, 15, 18, 19))
    t0, t1, l0, l1 = config.ramp
    ramp = LoadRamp(t0, t1, l0, l1)
    outage = LineOutage(config.outage[0], config.outage[1], t_out)
    stale_tl = EventTimeline(sorted([ramp, outage], key=lambda e: e.time), end_time=t1)
    fresh_tl = EventTimeline(
        sorted([ramp, outage, AdmittanceRefresh(refresh)], key=lambda e: e.time), end_time=t1
    )
    noise = config.noise
    start = time.perf_counter()
    kw = dict(noise=noise, sample_rate=config.sample_rate, monitored=monitored,
              lti_window=config.lti_window, reference=config.reference,
              enforce_q_limits=config.enforce_q_limits)
    stale = run_timeline(case, stale_tl, **kw)
    fresh = run_timeline(case, fresh_tl, **kw)
    stale.scenario, fresh.scenario = "outage", "outage_refreshed"
    dt = 1.0 / config.sample_rate
    raw, excess = _drops(stale, monitored, t_out, dt)
    raw_f, excess_f = _drops(fresh, monitored, t_out, dt)
    gaps = {}
    after = max(t_out, refresh)
    for b in monitored:
        ts, vs = stale.series(b)
        _, vf = fresh.series(b)
        sel = (ts >= after) & np.isfinite(vs) & np.isfinite(vf) & (vf != 0)
        gaps[b] = float(np.max(np.abs(vs[sel] - vf[sel]) / np.abs(vf[sel]))) if sel.any() else math.nan
    localized = max(monitored, key=lambda b: (excess[b] if np.isfinite(excess[b]) else -math.inf, -b))
    stale.companions = {"refreshed": fresh}
    stale.summary = {
        "scenario": "outage",
        "case": case.name,
        "outage": list(config.outage),
        "outage_time": t_out,
        "refresh_time": refresh,
        "ramp": {"t_start": t0, "t_end": t1, "lambda_start": l0, "lambda_end": l1},
        "monitored": list(monitored),
        "drop": raw,
        "excess_drop": excess,
        "drop_refreshed": raw_f,
        "excess_drop_refreshed": excess_f,
        "all_monitored_drop": all(raw[b] > 0 for b in monitored),
        "localized_bus": localized,
        "max_relative_gap": gaps,
        "collapse_times": stale.summary["collapse_times"],
        "seed": config.seed,
    }
    stale.timing = {"total_s": time.perf_counter() - start}
    return stale


def run_three_bus(config: ScenarioConfig, loads: Sequence[complex] = THREE_BUS_LOADS, bus: int = 3) -> ScenarioResult:
    """Circle geometry at ``bus`` for a sequence of injections at buses 2 and 3.

    Injections are used as given (negative real part = consumption). A
    point with no power-flow solution is reported as ``collapse``; the
    loadability along its own direction is included to show how far out it is.
    """
    base = load_case(config.case if config.case.endswith(".json") else "three_bus")
    Y = build_admittance(base)
    agents = make_agents(base, Y, reference=config.reference, buses=[bus])
    rows, points = [], []
    v = None
    for n, s in enumerate(loads, start=1):
        case = base.replace_buses(
            b if b.kind is BusKind.SLACK else replace(b, p_load=0.0, q_load=0.0, p_gen=s.real, q_gen=s.imag)
            for b in base.buses
        )
        info = {"index": n, "injection": [s.real, s.imag]}
        try:
            info["loadability"] = continuation_power_flow(case, lambda_step_initial=0.05).lambda_max
        except (ConvergenceError, ValueError) as exc:
            info["loadability"] = None
            log.info("point %d: no loadability trace (%s)", n, exc)
        try:
            init = None if v is None else PhasorSnapshot(case.bus_ids, v)
            snap = solve_power_flow(case, init, Y=Y)
        except ConvergenceError:
            info.update(classification="unsolved", vsi=None)
            rows.append(Row(float(n), bus, flag="collapse", event="unsolved"))
            points.append(info)
            continue
        v = snap.v
        volts = snap.as_dict()
        b = case.bus(bus)
        try:
            gp, gq = bus_circles(case, bus, volts, b.p_inj, b.q_inj, Y)
        except InfeasibleCircleError:
            info.update(classification="infeasible", vsi=None)
            rows.append(Row(float(n), bus, flag="infeasible", event="infeasible"))
            points.append(info)
            continue
        cls = classify_intersection(gp, gq)
        res = step_all(agents, case, synthesize_measurements(snap))[bus]
        comp = delta_components(circle_matrix(gp), circle_matrix(gq), bus)
        info.update(
            voltage=[volts[bus].real, volts[bus].imag],
            p_center=list(gp.center), p_radius=gp.radius,
            q_center=list(gq.center), q_radius=gq.radius,
            delta_star=comp.delta_star,
            classification=cls.value,
            vsi=res.value,
        )
        rows.append(Row(float(n), bus, res.value, math.nan, res.flag, cls.value))
        points.append(info)
    rp = [p.get("p_radius") for p in points]
    rq = [p.get("q_radius") for p in points]
    complete = all(x is not None for x in rp)
    result = ScenarioResult("three_bus", rows)
    result.summary = {
        "scenario": "three_bus",
        "bus": bus,
        "points": points,
        "classifications": [p["classification"] for p in points],
        "final_vsi": points[-1].get("vsi"),
        "r_q_decreasing": complete and all(b < a for a, b in zip(rq, rq[1:])),
        "r_p_increasing": complete and all(b > a for a, b in zip(rp, rp[1:])),
        "seed": config.seed,
    }
    return result


RUNNERS = {
    ScenarioKind.PROPORTIONAL: run_proportional,
    ScenarioKind.DIRECTIONAL: run_directional,
    ScenarioKind.NOISE_STUDY: run_noise_study,
    ScenarioKind.LINE_OUTAGE: run_line_outage,
    ScenarioKind.THREE_BUS: run_three_bus,
}


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    result = RUNNERS[config.kind](config)
    if config.out_dir is not None:
        result.write(config.out_dir)
    return result
