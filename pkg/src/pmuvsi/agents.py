"""Per-bus agents, simulated PMU measurements and event timelines.

Each :class:`BusAgent` carries only its own row of the admittance matrix and
its local injection; it never sees the network matrix or any voltage beyond
its neighbours. Measurements reach it through :func:`exchange`, which logs
every delivered message.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baselines import RankDeficientWindowError, estimate_thevenin, lti_index
from .circlevsi import (
    Vsi,
    delta_star_from_t,
    no_load_reference_from_row,
    pv_delta_star_from_t,
    pv_vsi_from_t,
    t_params_from_row,
    vsi_from_t,
)
from .errors import ConvergenceError, DegenerateCircleError, InfeasibleCircleError
from .netmodel import AdmittanceMatrix, BusKind, NetworkCase, apply_outage, build_admittance, scale_loads
from .powerflow import PhasorSnapshot, solve_power_flow
from .results import Row, ScenarioResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian PMU error on magnitude (p.u.) and angle (degrees)."""

    sigma_v: float = 0.0
    sigma_theta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_theta < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def silent(self) -> bool:
        return self.sigma_v == 0 and self.sigma_theta == 0


@dataclass(frozen=True)
class PmuMeasurement:
    bus: int
    voltage: complex
    timestamp: float = 0.0


def _time_key(t: float | None) -> int:
    # microsecond resolution, folded into the unsigned range SeedSequence wants
    return 0 if t is None else int(round(t * 1e6)) % 2**64


def _draw(noise: NoiseModel, t: float | None, bus: int) -> tuple[float, float]:
    rng = np.random.default_rng(np.random.SeedSequence([int(noise.seed), _time_key(t), int(bus)]))
    z = rng.standard_normal(2)
    return noise.sigma_v * z[0], np.deg2rad(noise.sigma_theta) * z[1]


def synthesize_measurements(
    truth: PhasorSnapshot, noise: NoiseModel | None = None, buses: Iterable[int] | None = None
) -> dict[int, PmuMeasurement]:
    """PMU readings of ``truth``; noise depends only on (seed, time, bus)."""
    t = 0.0 if truth.time is None else float(truth.time)
    want = truth.bus_ids if buses is None else tuple(buses)
    idx = truth.index
    out = {}
    for b in want:
        v = complex(truth.v[idx[b]])
        if noise is not None and not noise.silent:
            dm, da = _draw(noise, t, b)
            v = (abs(v) + dm) * np.exp(1j * (np.angle(v) + da))
        out[b] = PmuMeasurement(b, complex(v), t)
    return out


@dataclass(frozen=True)
class BusAgent:
    """Everything one bus knows: its admittance row, injection and reference."""

    bus: int
    kind: BusKind
    diag: complex
    off: tuple[tuple[int, complex], ...]
    p: float = 0.0
    q: float = 0.0
    v_spec: float = 1.0
    reference: float = math.nan

    @property
    def neighbors(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.off)

    @property
    def row(self) -> dict[int, complex]:
        return dict(self.off)

    def with_injection(self, p: float, q: float, v_spec: float | None = None) -> "BusAgent":
        return dataclasses.replace(self, p=p, q=q, v_spec=self.v_spec if v_spec is None else v_spec)

    def delta_star(self, voltages: Mapping[int, complex]) -> float:
        t = t_params_from_row(self.diag, self.row, voltages, bus=self.bus)
        if self.kind is BusKind.PV:
            return pv_delta_star_from_t(t, self.p, self.v_spec).delta_star
        return delta_star_from_t(t, self.p, self.q).delta_star


def make_agent(case: NetworkCase, d: int, Y: AdmittanceMatrix | None = None, reference: float | None = None) -> BusAgent:
    Y = build_admittance(case) if Y is None else Y
    b = case.bus(d)
    if b.kind is BusKind.SLACK:
        raise ValueError(f"bus {d} is the slack; it has no index")
    diag, off = Y.row(d)
    agent = BusAgent(d, b.kind, diag, tuple(sorted(off.items())), b.p_inj, b.q_inj, b.v_spec)
    if reference is None:
        try:
            reference = no_load_reference_from_row(diag, off, pv=b.kind is BusKind.PV, bus=d)
        except (DegenerateCircleError, InfeasibleCircleError):
            reference = math.nan
    return dataclasses.replace(agent, reference=reference)


def no_load_snapshot(case: NetworkCase, Y: AdmittanceMatrix | None = None) -> PhasorSnapshot:
    """Power-flow solution with every load and non-slack generation at zero."""
    return solve_power_flow(scale_loads(case, 0.0), Y=Y)


def make_agents(
    case: NetworkCase,
    Y: AdmittanceMatrix | None = None,
    reference: str = "solved",
    buses: Iterable[int] | None = None,
) -> dict[int, BusAgent]:
    """One agent per non-slack bus.

    ``reference="flat"`` normalizes by the index with all neighbours at 1/0
    p.u. and zero injection. ``"solved"`` uses the actual no-load operating
    point of this topology instead, so the index is exactly 1 at zero load
    even when generator setpoints and line charging lift voltages above 1.
    """
    if reference not in ("flat", "solved"):
        raise ValueError(f"unknown reference mode {reference!r}")
    Y = build_admittance(case) if Y is None else Y
    ids = [b.id for b in case.buses if b.kind is not BusKind.SLACK]
    if buses is not None:
        keep = set(buses)
        ids = [b for b in ids if b in keep]
    agents = {d: make_agent(case, d, Y) for d in ids}
    if reference == "solved":
        idle = scale_loads(case, 0.0)
        volts = no_load_snapshot(case, Y).as_dict()
        for d, a in agents.items():
            b = idle.bus(d)
            local = a.with_injection(b.p_inj, b.q_inj)
            try:
                ref = local.delta_star({k: volts[k] for k in a.neighbors})
            except (DegenerateCircleError, InfeasibleCircleError):
                ref = math.nan
            agents[d] = dataclasses.replace(a, reference=ref)
    return agents


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    timestamp: float


@dataclass(frozen=True)
class Inbox:
    receiver: int
    messages: Mapping[int, PmuMeasurement]
    missing: tuple[int, ...] = ()

    @property
    def stale(self) -> bool:
        return bool(self.missing)

    def voltages(self) -> dict[int, complex]:
        return {k: m.voltage for k, m in self.messages.items()}


@dataclass
class MessageLog:
    messages: list[Message] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.messages)

    def received_by(self, bus: int) -> set[int]:
        return {m.sender for m in self.messages if m.receiver == bus}


def exchange(
    agents: Mapping[int, BusAgent], measurements: Mapping[int, PmuMeasurement], log_: MessageLog | None = None
) -> dict[int, Inbox]:
    """Deliver each neighbour's measurement to every agent.

    Neighbours are those in the agent's own (possibly outdated) row. A
    missing measurement is not an error here; the inbox is marked stale.
    """
    out = {}
    for d in sorted(agents):
        got, missing = {}, []
        for k in agents[d].neighbors:
            m = measurements.get(k)
            if m is None:
                missing.append(k)
                continue
            got[k] = m
            if log_ is not None:
                log_.messages.append(Message(k, d, m.timestamp))
        out[d] = Inbox(d, got, tuple(missing))
    return out


@dataclass(frozen=True)
class AgentResult:
    bus: int
    vsi: Vsi | None
    flag: str

    @property
    def value(self) -> float:
        return math.nan if self.vsi is None else self.vsi.value


def agent_step(agent: BusAgent, inbox: Inbox) -> AgentResult:
    """Index at the agent's bus from its inbox alone.

    Flags: ``ok``/``negative`` for PQ buses, ``pv``/``pv_negative`` for PV
    buses, ``stale`` on a missing neighbour, ``degenerate`` when the circle
    collapses to a line and ``infeasible`` when a circle has no real radius.
    """
    if inbox.receiver != agent.bus:
        raise ValueError(f"inbox for bus {inbox.receiver} handed to agent {agent.bus}")
    if inbox.stale:
        return AgentResult(agent.bus, None, "stale")
    if not agent.reference > 0:
        return AgentResult(agent.bus, None, "degenerate")
    try:
        t = t_params_from_row(agent.diag, agent.row, inbox.voltages(), bus=agent.bus)
        if agent.kind is BusKind.PV:
            res = pv_vsi_from_t(t, agent.p, agent.v_spec, agent.reference)
        else:
            res = vsi_from_t(t, agent.p, agent.q, agent.reference)
    except DegenerateCircleError:
        return AgentResult(agent.bus, None, "degenerate")
    except InfeasibleCircleError:
        return AgentResult(agent.bus, None, "infeasible")
    flag = "negative" if res.negative else "ok"
    if agent.kind is BusKind.PV:
        flag = "pv" if flag == "ok" else "pv_negative"
    return AgentResult(agent.bus, res, flag)


def step_all(
    agents: Mapping[int, BusAgent], case_now: NetworkCase, measurements: Mapping[int, PmuMeasurement], log_=None
) -> dict[int, AgentResult]:
    """Refresh local injections from ``case_now`` and run every agent."""
    local = {}
    for d, a in agents.items():
        b = case_now.bus(d)
        local[d] = a.with_injection(b.p_inj, b.q_inj, b.v_spec)
    inboxes = exchange(local, measurements, log_)
    return {d: agent_step(local[d], inboxes[d]) for d in sorted(local)}


# -- timelines ---------------------------------------------------------------


@dataclass(frozen=True)
class LoadRamp:
    """Load factor moving linearly from ``lam_start`` to ``lam_end``."""

    time: float
    end_time: float
    lam_start: float
    lam_end: float

    def __post_init__(self):
        if self.end_time < self.time:
            raise ValueError("ramp ends before it starts")

    def at(self, t: float) -> float:
        if self.end_time == self.time:
            return self.lam_end
        s = min(max((t - self.time) / (self.end_time - self.time), 0.0), 1.0)
        return self.lam_start + s * (self.lam_end - self.lam_start)


@dataclass(frozen=True)
class LineOutage:
    from_bus: int
    to_bus: int
    time: float

    @property
    def label(self) -> str:
        return f"outage:{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class AdmittanceRefresh:
    time: float
    label: str = "refresh"


@dataclass(frozen=True)
class EventTimeline:
    events: tuple = ()
    end_time: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("timeline events must be ordered by time")

    @property
    def ramps(self) -> list[LoadRamp]:
        return [e for e in self.events if isinstance(e, LoadRamp)]

    @property
    def duration(self) -> float:
        if self.end_time is not None:
            return self.end_time
        ends = [getattr(e, "end_time", e.time) for e in self.events]
        return max(ends, default=0.0)

    def load_factor(self, t: float) -> float:
        active = [r for r in self.ramps if r.time <= t]
        if active:
            return active[-1].at(t)
        return self.ramps[0].lam_start if self.ramps else 1.0

    def due(self, t_prev: float | None, t: float) -> list:
        """Topology events with ``t_prev < time <= t``."""
        return [
            e for e in self.events
            if not isinstance(e, LoadRamp) and (t_prev is None or e.time > t_prev) and e.time <= t
        ]


def sample_times(duration: float, sample_rate: float) -> np.ndarray:
    if not sample_rate > 0:
        raise ValueError("sample_rate must be positive")
    n = int(math.floor(duration * sample_rate + 1e-9))
    return np.arange(n + 1) / sample_rate


def _lti_values(history, Y_csr, meas, idx, buses, window):
    v = np.zeros(len(idx), dtype=complex)
    for b, m in meas.items():
        v[idx[b]] = m.voltage
    i_inj = Y_csr @ v
    out = {}
    for b in buses:
        vb, ib = v[idx[b]], -i_inj[idx[b]]  # current drawn from the grid
        h = history.setdefault(b, deque(maxlen=window))
        h.append((vb, ib))
        out[b] = math.nan
        if len(h) == window:
            try:
                out[b] = lti_index(estimate_thevenin(list(h)), vb, ib)
            except RankDeficientWindowError:
                pass
    return out


def run_timeline(
    case: NetworkCase,
    timeline: EventTimeline,
    noise: NoiseModel | None = None,
    sample_rate: float = 1.0,
    monitored: Sequence[int] | None = None,
    load_buses: Sequence[int] | None = None,
    lti_window: int = 10,
    reference: str = "solved",
    enforce_q_limits: bool = False,
) -> ScenarioResult:
    """Quasi-static simulation sampled at ``sample_rate`` Hz.

    Outages change the physical network at once. Agents keep the rows they
    were built with until an :class:`AdmittanceRefresh` fires.
    """
    physical = case
    Y_phys = build_admittance(physical)
    agents = make_agents(case, Y_phys, reference=reference)
    report = sorted(agents) if monitored is None else sorted(monitored)
    idx = case.index
    rows: list[Row] = []
    history: dict = {}
    v_prev = None
    t_prev = None
    collapses = []
    for t in sample_times(timeline.duration, sample_rate):
        t = float(t)
        labels = []
        for ev in timeline.due(t_prev, t):
            if isinstance(ev, LineOutage):
                physical = apply_outage(physical, ev.from_bus, ev.to_bus)
                Y_phys = build_admittance(physical)
            elif isinstance(ev, AdmittanceRefresh):
                agents = make_agents(physical, Y_phys, reference=reference)
            labels.append(ev.label)
        t_prev = t
        lam = timeline.load_factor(t)
        now = scale_loads(physical, lam, load_buses)
        try:
            init = None if v_prev is None else PhasorSnapshot(case.bus_ids, v_prev)
            snap = solve_power_flow(now, init, Y=Y_phys, enforce_q_limits=enforce_q_limits)
        except ConvergenceError as exc:
            log.info("t=%g: power flow failed (%s)", t, exc)
            collapses.append(t)
            event = ";".join(labels + ["collapse"])
            rows.extend(Row(t, b, flag="collapse", event=event) for b in report)
            continue
        v_prev = snap.v
        snap = snap.replace(time=t, lam=lam)
        meas = synthesize_measurements(snap, noise)
        results = step_all(agents, now, meas)
        ltis = _lti_values(history, Y_phys.Y, meas, idx, report, lti_window)
        event = ";".join(labels)
        for b in report:
            r = results[b]
            rows.append(Row(t, b, r.value, ltis[b], r.flag, event))
    summary = {
        "collapse_times": collapses,
        "monitored": report,
        "sample_rate": sample_rate,
        "seed": None if noise is None else int(noise.seed),
    }
    return ScenarioResult("timeline", rows, summary)
