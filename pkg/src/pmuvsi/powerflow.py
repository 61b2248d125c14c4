"""Newton-Raphson AC power flow and continuation power flow (CPF).

The CPF traces the upper branch of the PV curve from a starting load level
up to the nose using a tangent predictor and a locally parameterized
corrector: the continuation parameter is whichever state component moves
fastest along the tangent, which is the load factor far from the nose and a
voltage magnitude close to it.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SingularJacobianError
from .netmodel import AdmittanceMatrix, BusKind, NetworkCase, build_admittance, scale_loads

log = logging.getLogger(__name__)

PF_TOL = 1e-8
CPF_MIN_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class PhasorSnapshot:
    """Complex bus voltages (p.u.) at one instant, ordered like ``bus_ids``."""

    bus_ids: tuple[int, ...]
    v: np.ndarray
    time: float | None = None
    lam: float | None = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        if v.shape != (len(self.bus_ids),):
            raise ValueError("one voltage per bus required")
        object.__setattr__(self, "bus_ids", tuple(self.bus_ids))
        object.__setattr__(self, "v", v)

    @property
    def index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    def __getitem__(self, bus_id: int) -> complex:
        return complex(self.v[self.bus_ids.index(bus_id)])

    def as_dict(self) -> dict[int, complex]:
        return {b: complex(x) for b, x in zip(self.bus_ids, self.v)}

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.v)

    def replace(self, **kw) -> "PhasorSnapshot":
        return dataclasses.replace(self, **kw)


def flat_start(case: NetworkCase) -> PhasorSnapshot:
    v = np.array([1.0 if b.kind is BusKind.PQ else b.v_spec for b in case.buses], dtype=complex)
    return PhasorSnapshot(case.bus_ids, v)


def bus_powers(Y, v: np.ndarray) -> np.ndarray:
    """Complex power injected at every bus, ``S = V * conj(Y V)``."""
    Y = Y.Y if isinstance(Y, AdmittanceMatrix) else Y
    return v * np.conj(Y @ v)


def bus_types(case: NetworkCase):
    kinds = [b.kind for b in case.buses]
    ref = np.array([i for i, k in enumerate(kinds) if k is BusKind.SLACK], dtype=int)
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    return ref, pv, pq


def dsbus_dv(Y: sp.csr_matrix, v: np.ndarray):
    """Partial derivatives of bus power injections w.r.t. angle and magnitude."""
    ibus = Y @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ibus)
    diag_vn = sp.diags(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(Y @ diag_vn) + np.conj(diag_i) @ diag_vn
    ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
    return sp.csr_matrix(ds_dva), sp.csr_matrix(ds_dvm)


def _jacobian(Y, v, pvpq, pq):
    ds_dva, ds_dvm = dsbus_dv(Y, v)
    j11 = ds_dva[pvpq][:, pvpq].real
    j12 = ds_dvm[pvpq][:, pq].real
    j21 = ds_dva[pq][:, pvpq].imag
    j22 = ds_dvm[pq][:, pq].imag
    return sp.bmat([[j11, j12], [j21, j22]], format="csc")


def _mismatch(Y, v, sbus, pvpq, pq):
    mis = v * np.conj(Y @ v) - sbus
    return np.r_[mis[pvpq].real, mis[pq].imag]


def _solve(A, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A, b)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise SingularJacobianError(f"singular Jacobian: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise SingularJacobianError("singular Jacobian (non-finite update)")
    return x


def newton_pf(Y, sbus, v0, ref, pv, pq, tol=PF_TOL, max_iter=30):
    """Polar Newton-Raphson. Returns ``(v, converged, iterations, max_mismatch)``.

    Magnitudes at ``ref`` and ``pv`` positions of ``v0`` are held fixed, as are
    angles at ``ref``.
    """
    Y = Y.Y if isinstance(Y, AdmittanceMatrix) else Y
    v = np.asarray(v0, dtype=complex).copy()
    pvpq = np.r_[pv, pq].astype(int)
    pq = np.asarray(pq, dtype=int)
    npvpq = len(pvpq)
    va, vm = np.angle(v), np.abs(v)

    f = _mismatch(Y, v, sbus, pvpq, pq)
    norm = np.max(np.abs(f)) if len(f) else 0.0
    it = 0
    while norm >= tol and it < max_iter:
        it += 1
        J = _jacobian(Y, v, pvpq, pq)
        dx = _solve(J, -f)
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = _mismatch(Y, v, sbus, pvpq, pq)
        norm = np.max(np.abs(f))
        if not np.isfinite(norm):
            break
    return v, bool(norm < tol), it, float(norm)


def _start_vector(case, initial):
    if initial is None:
        v = flat_start(case).v.copy()
    else:
        v = np.asarray(initial.v if isinstance(initial, PhasorSnapshot) else initial, dtype=complex).copy()
        if v.shape != (case.n_bus,):
            raise ValueError("initial snapshot does not match the case")
    for i, b in enumerate(case.buses):
        if b.kind is not BusKind.PQ:
            v[i] = b.v_spec * np.exp(1j * np.angle(v[i]))
        if b.kind is BusKind.SLACK:
            v[i] = b.v_spec * np.exp(1j * np.angle(b.v0))
    return v


def _q_violations(case, Y, v):
    s = bus_powers(Y, v)
    out = []
    for i, b in enumerate(case.buses):
        if b.kind is not BusKind.PV:
            continue
        qg = s[i].imag + b.q_load
        if qg > b.q_max + 1e-9:
            out.append((i, b.q_max))
        elif qg < b.q_min - 1e-9:
            out.append((i, b.q_min))
    return out


def switch_to_pq(case: NetworkCase, fixes: Sequence[tuple[int, float]]) -> NetworkCase:
    """Turn PV buses into PQ buses with generator reactive output pinned at a limit."""
    buses = list(case.buses)
    for i, q in fixes:
        buses[i] = dataclasses.replace(buses[i], kind=BusKind.PQ, q_gen=q)
    return case.replace_buses(buses)


def solve_power_flow(
    case: NetworkCase,
    initial: PhasorSnapshot | None = None,
    tol: float = PF_TOL,
    max_iter: int = 30,
    enforce_q_limits: bool = False,
    Y: AdmittanceMatrix | None = None,
) -> PhasorSnapshot:
    """Solve the AC power flow; raises ``ConvergenceError`` on failure."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    Y = build_admittance(case) if Y is None else Y
    v = _start_vector(case, initial)
    work = case
    for _ in range(case.n_bus + 1):
        ref, pv, pq = bus_types(work)
        v, ok, it, norm = newton_pf(Y, work.injections(), v, ref, pv, pq, tol, max_iter)
        if not ok:
            raise ConvergenceError(
                f"power flow did not converge in {it} iterations (max mismatch {norm:.3g})",
                iterations=it,
                mismatch=norm,
            )
        if not enforce_q_limits:
            break
        fixes = _q_violations(work, Y, v)
        if not fixes:
            break
        log.debug("switching %d PV buses to PQ", len(fixes))
        work = switch_to_pq(work, fixes)
    return PhasorSnapshot(case.bus_ids, v)


def power_mismatch(case: NetworkCase, snapshot: PhasorSnapshot, Y: AdmittanceMatrix | None = None) -> np.ndarray:
    """Per-bus complex mismatch ``S(V) - S_sched``.

    Reactive mismatch is zeroed at PV buses and both parts at the slack,
    where those quantities are free.
    """
    Y = build_admittance(case) if Y is None else Y
    mis = bus_powers(Y, snapshot.v) - case.injections()
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.SLACK:
            mis[i] = 0
        elif b.kind is BusKind.PV:
            mis[i] = mis[i].real
    return mis


def lowest_voltage_bus(snapshot: PhasorSnapshot) -> tuple[int, float]:
    """Bus with the smallest voltage magnitude; ties go to the lowest bus id."""
    mags = np.abs(snapshot.v)
    best = min(range(len(mags)), key=lambda i: (mags[i], snapshot.bus_ids[i]))
    return snapshot.bus_ids[best], float(mags[best])


@dataclass
class CpfTrajectory:
    """Corrected points along the upper PV-curve branch."""

    points: list[tuple[float, PhasorSnapshot]]
    lambda_max: float
    critical_bus_hint: int
    load_buses: tuple[int, ...] | None = None
    enforce_q_limits: bool = False
    iterations: list[int] = field(default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lam for lam, _ in self.points])

    @property
    def voltages(self) -> np.ndarray:
        """Array of shape ``(n_points, n_bus)``."""
        return np.array([s.v for _, s in self.points])

    @property
    def nose(self) -> PhasorSnapshot:
        return self.points[-1][1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "bus", "v_re", "v_im", "v_mag"])
            for lam, snap in self.points:
                for b, x in zip(snap.bus_ids, snap.v):
                    w.writerow([f"{lam:.10g}", b, f"{x.real:.12g}", f"{x.imag:.12g}", f"{abs(x):.12g}"])


class _LoadPath:
    """Scheduled injections ``S(lam) = s0 + lam * sdir`` for the CPF."""

    def __init__(self, case: NetworkCase, load_buses):
        self.case = case
        self.load_buses = None if load_buses is None else tuple(load_buses)
        zero = scale_loads(case, 0.0, self.load_buses)
        self.s0 = zero.injections()
        self.sdir = case.injections() - self.s0
        if not np.any(np.abs(self.sdir) > 0):
            raise ValueError("nothing scaled: the chosen load direction is zero")
        self.qload0 = np.array([b.q_load for b in zero.buses])
        self.qload_dir = np.array([b.q_load for b in case.buses]) - self.qload0
        self.work = case

    def at(self, lam: float) -> np.ndarray:
        return self.s0 + lam * self.sdir

    def case_at(self, lam: float) -> NetworkCase:
        out = scale_loads(self.case, lam, self.load_buses)
        switched = [
            (i, b.q_gen) for i, b in enumerate(self.work.buses)
            if b.kind is BusKind.PQ and self.case.buses[i].kind is BusKind.PV
        ]
        return switch_to_pq(out, switched) if switched else out

    def pin_q(self, fixes):
        # switched bus: Q = q_limit - q_load(lam)
        for i, q in fixes:
            self.s0[i] = complex(self.s0[i].real, q - self.qload0[i])
            self.sdir[i] = complex(self.sdir[i].real, -self.qload_dir[i])
        self.work = switch_to_pq(self.work, fixes)


def continuation_power_flow(
    case: NetworkCase,
    lambda_step_initial: float = 0.1,
    adaptive: bool = True,
    load_buses: Sequence[int] | None = None,
    lambda_start: float = 0.0,
    lambda_stop: float | None = None,
    tol: float = PF_TOL,
    min_step: float = CPF_MIN_STEP,
    max_step: float = 0.5,
    max_points: int = 5000,
    enforce_q_limits: bool = False,
) -> CpfTrajectory:
    """Trace the upper PV-curve branch from ``lambda_start`` up to the nose.

    Loads (all of them, or only those at ``load_buses``) and non-slack
    generation follow ``scale_loads(case, lam, load_buses)``. With
    ``adaptive=False`` the load factor is stepped by the fixed
    ``lambda_step_initial`` with a plain Newton solve per step, which stops one
    step short of the first divergence.
    """
    Y = build_admittance(case)
    path = _LoadPath(case, load_buses)
    ref, pv, pq = bus_types(case)

    try:
        start = solve_power_flow(path.case_at(lambda_start), tol=tol, Y=Y)
    except ConvergenceError as exc:
        raise ConvergenceError(f"base case at lambda={lambda_start} is infeasible: {exc}") from exc
    v = start.v

    if not adaptive:
        return _fixed_step(case, Y, path, v, lambda_start, lambda_step_initial, lambda_stop, tol, max_points, load_buses)

    points = [(lambda_start, PhasorSnapshot(case.bus_ids, v, lam=lambda_start))]
    iters = [0]
    pvpq = np.r_[pv, pq].astype(int)
    npvpq, npq = len(pvpq), len(pq)
    m = npvpq + npq
    lam = lambda_start
    va, vm = np.angle(v), np.abs(v)
    x = np.r_[va[pvpq], vm[pq], lam]

    def unpack(x):
        va_ = va.copy()
        vm_ = vm.copy()
        va_[pvpq] = x[:npvpq]
        vm_[pq] = x[npvpq:m]
        return vm_ * np.exp(1j * va_), x[m]

    def augmented_jac(v_, k):
        J = _jacobian(Y.Y, v_, pvpq, pq)
        sd = path.sdir
        f_lam = -np.r_[sd[pvpq].real, sd[pq].imag]
        ek = sp.csr_matrix(([1.0], ([0], [k])), shape=(1, m + 1))
        top = sp.hstack([J, sp.csc_matrix(f_lam.reshape(-1, 1))])
        return sp.vstack([top, ek], format="csc")

    def tangent(v_, k, sign):
        rhs = np.zeros(m + 1)
        rhs[-1] = sign
        z = _solve(augmented_jac(v_, k), rhs)
        return z / np.linalg.norm(z)

    k, sign = m, 1.0  # start parameterized by lambda, increasing
    tau = tangent(v, k, sign)
    h = lambda_step_initial
    reason = "max_points"
    while len(points) < max_points:
        if h < min_step:
            reason = "nose"
            break
        k = int(np.argmax(np.abs(tau)))
        sign = float(np.sign(tau[k]))
        xp = x + h * tau
        xc = xp.copy()
        ok = False
        for it in range(1, 11):
            vc, lamc = unpack(xc)
            f = np.r_[_mismatch(Y.Y, vc, path.at(lamc), pvpq, pq), xc[k] - xp[k]]
            if np.max(np.abs(f)) < tol:
                ok = True
                break
            try:
                xc = xc - _solve(augmented_jac(vc, k), f)
            except SingularJacobianError:
                break
            if not np.all(np.isfinite(xc)) or np.any(xc[npvpq:m] <= 0):
                break
        if not ok:
            h *= 0.5
            continue
        vc, lamc = unpack(xc)
        try:
            tau_new = tangent(vc, k, sign)
        except SingularJacobianError:
            h *= 0.5
            continue
        if lamc <= lam or tau_new[m] <= 0:
            # stepped over the fold: retry closer to the last upper-branch point
            h *= 0.5
            continue
        if lambda_stop is not None and lamc > lambda_stop:
            # land exactly on the requested load level if it is below the nose
            v_last, _ = unpack(x)
            try:
                v_stop, ok, it, _ = newton_pf(Y, path.at(lambda_stop), v_last, ref, pv, pq, tol, 30)
            except SingularJacobianError:
                ok = False
            if ok and lambda_stop > lam:
                lam = float(lambda_stop)
                points.append((lam, PhasorSnapshot(case.bus_ids, v_stop, lam=lam)))
                iters.append(it)
                reason = "lambda_stop"
                break
            h *= 0.5
            continue
        if enforce_q_limits:
            fixes = _q_violations(path.work, Y, vc)
            if fixes:
                path.pin_q(fixes)
                ref, pv, pq = bus_types(path.work)
                # re-solve at the same load level with the new bus types
                try:
                    snap = solve_power_flow(path.case_at(lamc), PhasorSnapshot(case.bus_ids, vc), tol=tol, Y=Y)
                except ConvergenceError:
                    reason = "q_limit_collapse"
                    break
                vc = snap.v
                pvpq = np.r_[pv, pq].astype(int)
                npvpq, npq = len(pvpq), len(pq)
                m = npvpq + npq
                va, vm = np.angle(vc), np.abs(vc)
                xc = np.r_[va[pvpq], vm[pq], lamc]
                tau_new = tangent(vc, m, 1.0)
        x, lam, tau = xc, lamc, tau_new
        va, vm = np.angle(vc), np.abs(vc)
        points.append((lam, PhasorSnapshot(case.bus_ids, vc, lam=lam)))
        iters.append(it)
        if it <= 3:
            h = min(h * 2.0, max_step)
        elif it >= 6:
            h *= 0.5
    log.info("CPF stopped (%s) at lambda=%.6f after %d points", reason, lam, len(points))
    crit, _ = lowest_voltage_bus(points[-1][1])
    return CpfTrajectory(
        points=points,
        lambda_max=float(lam),
        critical_bus_hint=crit,
        load_buses=None if load_buses is None else tuple(load_buses),
        enforce_q_limits=enforce_q_limits,
        iterations=iters,
    )


def _fixed_step(case, Y, path, v, lam0, step, lambda_stop, tol, max_points, load_buses):
    if not step > 0:
        raise ValueError("fixed lambda step must be positive")
    ref, pv, pq = bus_types(case)
    points = [(lam0, PhasorSnapshot(case.bus_ids, v, lam=lam0))]
    iters = [0]
    lam = lam0
    # extrapolate the initial guess linearly from the last two points
    prev = v
    while len(points) < max_points:
        nxt = lam + step
        if lambda_stop is not None and nxt > lambda_stop + 1e-12:
            break
        guess = v + (v - prev) if len(points) > 1 else v.copy()
        # the extrapolation must not move regulated magnitudes
        fixed = np.r_[ref, pv].astype(int)
        guess[fixed] = np.abs(v[fixed]) * np.exp(1j * np.angle(guess[fixed]))
        vn, ok, it, _ = newton_pf(Y, path.at(nxt), guess, ref, pv, pq, tol, 30)
        if not ok or np.any(np.abs(vn[pq]) <= 0):
            vn, ok, it, _ = newton_pf(Y, path.at(nxt), v, ref, pv, pq, tol, 30)
        if not ok:
            break
        # a large jump means Newton landed on the lower branch next to the nose
        if np.max(np.abs(vn - v)) > 0.1:
            break
        prev, v, lam = v, vn, nxt
        points.append((lam, PhasorSnapshot(case.bus_ids, v, lam=lam)))
        iters.append(it)
    crit, _ = lowest_voltage_bus(points[-1][1])
    return CpfTrajectory(points, float(lam), crit, None if load_buses is None else tuple(load_buses), False, iters)


def resample(traj: CpfTrajectory, case: NetworkCase, lambdas: Sequence[float], tol: float = PF_TOL) -> CpfTrajectory:
    """Exact power-flow points at the requested load factors (<= lambda_max).

    Each point is re-solved from the nearest trajectory point below it, so the
    result stays on the upper branch. The nose point itself is always kept.
    """
    Y = build_admittance(case)
    path = _LoadPath(case, traj.load_buses)
    ref, pv, pq = bus_types(case)
    lams = traj.lambdas
    out = []
    for lam in sorted(set(float(x) for x in lambdas)):
        if lam > traj.lambda_max:
            continue
        j = int(np.searchsorted(lams, lam, side="right") - 1)
        j = max(j, 0)
        v, ok, _, norm = newton_pf(Y, path.at(lam), traj.points[j][1].v, ref, pv, pq, tol, 30)
        if not ok:
            raise ConvergenceError(f"resampling failed at lambda={lam} (mismatch {norm:.3g})")
        out.append((lam, PhasorSnapshot(case.bus_ids, v, lam=lam)))
    if not out or out[-1][0] < traj.lambda_max:
        out.append(traj.points[-1])
    return dataclasses.replace(traj, points=out, iterations=[])
