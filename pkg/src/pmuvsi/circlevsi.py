"""Power-flow circles and the determinant-based voltage stability index.

At bus ``d`` the rectangular power-flow equations read::

    p_d = t1 (vr^2 + vi^2) + t2 vr + t3 vi
    q_d = t4 (vr^2 + vi^2) - t3 vr + t2 vi

with ``t1 = G_dd``, ``t4 = -B_dd`` and ``t2``/``t3`` linear in the
neighbour voltages. Each is a circle in the (vr, vi) plane. Writing both as
2x2 hermitian matrices ``[[1, -conj(c)], [-c, |c|^2 - r^2]]``, the determinant
of the pencil ``l1 Cp + l2 Cq`` is the quadratic form

    dp l1^2 + dq l2^2 + 2 dpq l1 l2,

and ``delta_star = dp dq - dpq^2`` is positive when the circles cut in two
points, zero when they touch and negative when they are apart. Normalizing by
its value at no load gives the index.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateCircleError, InfeasibleCircleError
from .netmodel import AdmittanceMatrix, BusKind, NetworkCase, build_admittance

DEGENERATE_TOL = 1e-9
TOUCH_TOL = 1e-9


@dataclass(frozen=True)
class TParams:
    t1: float
    t2: float
    t3: float
    t4: float
    bus: int | None = None


@dataclass(frozen=True)
class CircleGeometry:
    center: tuple[float, float]
    radius: float

    @property
    def gamma(self) -> complex:
        return complex(self.center[0], self.center[1])

    def residual(self, v: complex) -> float:
        """Signed distance of ``v`` from the circle."""
        return abs(v - self.gamma) - self.radius


@dataclass(frozen=True)
class CircleMatrix:
    """Hermitian form ``A z z* + B z + C z* + D = 0``."""

    A: float
    B: complex
    C: complex
    D: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.A, self.B], [self.C, self.D]], dtype=complex)

    @property
    def det(self) -> float:
        return float((self.A * self.D - self.B * self.C).real)

    @property
    def b_vector(self) -> np.ndarray:
        # linear-term vector, equal to -2 * center for A == 1
        return np.array([2 * self.C.real, 2 * self.C.imag])


@dataclass(frozen=True)
class DeltaComponents:
    delta_p: float
    delta_q: float
    delta_pq: float
    delta_star: float
    bus: int | None = None

    def form(self) -> np.ndarray:
        """Symmetric matrix of the quadratic form in (l1, l2)."""
        return np.array([[self.delta_p, self.delta_pq], [self.delta_pq, self.delta_q]])


@dataclass(frozen=True)
class Vsi:
    value: float
    bus: int | None
    raw: float
    reference: float

    @property
    def negative(self) -> bool:
        return self.value < 0


class Intersection(enum.Enum):
    TWO_POINTS = "TwoPoints"
    ONE_POINT = "OnePoint"
    NONE = "None"


def t_params_from_row(
    diag: complex, off: Mapping[int, complex], neighbor_voltages: Mapping[int, complex], bus=None
) -> TParams:
    """t-parameters from one admittance row and the neighbour voltages.

    ``diag`` is ``Y[d, d]`` and ``off`` maps each neighbour ``k`` to
    ``Y[d, k]``. Using the diagonal (rather than minus the sum of the
    off-diagonals) folds shunts, line charging and taps into t1/t4, so the
    circle equations hold exactly at a solved operating point.
    """
    missing = set(off) - set(neighbor_voltages)
    if missing:
        raise KeyError(f"bus {bus}: no voltage for neighbours {sorted(missing)}")
    t1 = diag.real
    t4 = -diag.imag
    t2 = 0.0
    t3 = 0.0
    for k in sorted(off):
        y = off[k]
        vk = neighbor_voltages[k]
        g, b = y.real, y.imag
        t2 += vk.real * g - vk.imag * b
        t3 += vk.real * b + vk.imag * g
    if abs(t1) < DEGENERATE_TOL or abs(t4) < DEGENERATE_TOL:
        raise DegenerateCircleError(f"bus {bus}: |t1|={abs(t1):.3g}, |t4|={abs(t4):.3g}")
    return TParams(t1, t2, t3, t4, bus)


def compute_t_params(Y: AdmittanceMatrix, d: int, neighbor_voltages: Mapping[int, complex]) -> TParams:
    diag, off = Y.row(d)
    extra = set(neighbor_voltages) - set(off)
    if extra:
        raise KeyError(f"bus {d}: voltages given for non-neighbours {sorted(extra)}")
    return t_params_from_row(diag, off, neighbor_voltages, bus=d)


def _circle(center, sq_radius, what):
    if sq_radius < 0:
        if sq_radius > -1e-14 * max(1.0, center[0] ** 2 + center[1] ** 2):
            sq_radius = 0.0
        else:
            raise InfeasibleCircleError(f"{what} circle has negative squared radius {sq_radius:.6g}")
    return CircleGeometry(center, float(np.sqrt(sq_radius)))


def p_circle(t: TParams, p_d: float) -> CircleGeometry:
    c = (-t.t2 / (2 * t.t1), -t.t3 / (2 * t.t1))
    return _circle(c, p_d / t.t1 + (t.t2**2 + t.t3**2) / (4 * t.t1**2), "real-power")


def q_circle(t: TParams, q_d: float) -> CircleGeometry:
    c = (t.t3 / (2 * t.t4), -t.t2 / (2 * t.t4))
    return _circle(c, q_d / t.t4 + (t.t3**2 + t.t2**2) / (4 * t.t4**2), "reactive-power")


def voltage_circle(v_spec: float) -> CircleGeometry:
    return CircleGeometry((0.0, 0.0), float(v_spec))


def circles_from_t(t: TParams, p_d: float, q_d: float) -> tuple[CircleGeometry, CircleGeometry]:
    return p_circle(t, p_d), q_circle(t, q_d)


def circle_matrix(geom: CircleGeometry) -> CircleMatrix:
    g = geom.gamma
    return CircleMatrix(1.0, -g.conjugate(), -g, abs(g) ** 2 - geom.radius**2)


def delta_components(cp: CircleMatrix, cq: CircleMatrix, bus=None) -> DeltaComponents:
    """Coefficients of det(l1 Cp + l2 Cq) for two normalized circle matrices.

    The cross term is ``(c_p + c_q)/2 - (b_p . b_q)/4``, obtained by expanding
    the 2x2 determinant directly.
    """
    if cp.A != 1 or cq.A != 1:
        raise ValueError("circle matrices must be normalized (A == 1)")
    bp, bq = cp.b_vector, cq.b_vector
    dp = cp.D - bp @ bp / 4
    dq = cq.D - bq @ bq / 4
    dpq = (cp.D + cq.D) / 2 - bp @ bq / 4
    return DeltaComponents(float(dp), float(dq), float(dpq), float(dp * dq - dpq * dpq), bus)


def pencil_determinant(cp: CircleMatrix, cq: CircleMatrix, l1: float, l2: float) -> float:
    """det(l1 Cp + l2 Cq) by direct 2x2 expansion."""
    m = l1 * cp.as_array() + l2 * cq.as_array()
    return float((m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]).real)


def delta_star_geometric(a: CircleGeometry, b: CircleGeometry) -> float:
    """Closed form ``ra^2 rb^2 - ((d^2 - ra^2 - rb^2) / 2)^2``."""
    d2 = abs(a.gamma - b.gamma) ** 2
    ra2, rb2 = a.radius**2, b.radius**2
    return ra2 * rb2 - ((d2 - ra2 - rb2) / 2) ** 2


def classify_intersection(a: CircleGeometry, b: CircleGeometry, tol: float = TOUCH_TOL) -> Intersection:
    d = abs(a.gamma - b.gamma)
    lo, hi = abs(a.radius - b.radius), a.radius + b.radius
    scale = max(1.0, hi)
    if abs(d - hi) <= tol * scale or (d > tol * scale and abs(d - lo) <= tol * scale):
        return Intersection.ONE_POINT
    if lo < d < hi:
        return Intersection.TWO_POINTS
    return Intersection.NONE


def delta_star_from_t(t: TParams, p_d: float, q_d: float) -> DeltaComponents:
    gp, gq = circles_from_t(t, p_d, q_d)
    return delta_components(circle_matrix(gp), circle_matrix(gq), bus=t.bus)


def pv_delta_star_from_t(t: TParams, p_d: float, v_spec: float) -> DeltaComponents:
    gp = p_circle(t, p_d)
    return delta_components(circle_matrix(gp), circle_matrix(voltage_circle(v_spec)), bus=t.bus)


def _neighbors_flat(off: Mapping[int, complex]) -> dict[int, complex]:
    return {k: 1.0 + 0.0j for k in off}


def no_load_reference_from_row(diag: complex, off: Mapping[int, complex], pv: bool = False, bus=None) -> float:
    """delta_star with every neighbour at 1/0 p.u. and zero injection."""
    t = t_params_from_row(diag, off, _neighbors_flat(off), bus=bus)
    comp = pv_delta_star_from_t(t, 0.0, 1.0) if pv else delta_star_from_t(t, 0.0, 0.0)
    return comp.delta_star


def no_load_reference(case: NetworkCase, d: int, Y: AdmittanceMatrix | None = None, pv: bool | None = None) -> float:
    """Normalizing constant for bus ``d``; depends on topology only."""
    Y = build_admittance(case) if Y is None else Y
    if pv is None:
        pv = case.bus(d).kind is BusKind.PV
    diag, off = Y.row(d)
    return no_load_reference_from_row(diag, off, pv=pv, bus=d)


def vsi_from_t(t: TParams, p_d: float, q_d: float, reference: float) -> Vsi:
    if not reference > 0:
        raise ValueError(f"bus {t.bus}: no-load reference must be positive, got {reference}")
    comp = delta_star_from_t(t, p_d, q_d)
    return Vsi(comp.delta_star / reference, t.bus, comp.delta_star, reference)


def pv_vsi_from_t(t: TParams, p_d: float, v_spec: float, reference: float) -> Vsi:
    if not reference > 0:
        raise ValueError(f"bus {t.bus}: no-load reference must be positive, got {reference}")
    comp = pv_delta_star_from_t(t, p_d, v_spec)
    return Vsi(comp.delta_star / reference, t.bus, comp.delta_star, reference)


def vsi(
    case: NetworkCase,
    d: int,
    neighbor_voltages: Mapping[int, complex],
    p_d: float,
    q_d: float,
    reference: float | None = None,
    Y: AdmittanceMatrix | None = None,
) -> Vsi:
    """Normalized index at PQ bus ``d`` from its neighbours' voltages."""
    Y = build_admittance(case) if Y is None else Y
    if reference is None:
        reference = no_load_reference(case, d, Y, pv=False)
    t = compute_t_params(Y, d, neighbor_voltages)
    return vsi_from_t(t, p_d, q_d, reference)


def pv_bus_vsi(
    case: NetworkCase,
    d: int,
    neighbor_voltages: Mapping[int, complex],
    p_d: float,
    v_spec: float,
    reference: float | None = None,
    Y: AdmittanceMatrix | None = None,
) -> Vsi:
    """Index at PV bus ``d``: real-power circle against the |V| = v_spec circle."""
    Y = build_admittance(case) if Y is None else Y
    if reference is None:
        reference = no_load_reference(case, d, Y, pv=True)
    t = compute_t_params(Y, d, neighbor_voltages)
    return pv_vsi_from_t(t, p_d, v_spec, reference)


def bus_circles(case: NetworkCase, d: int, voltages: Mapping[int, complex], p_d: float, q_d: float, Y=None):
    """Both circles at ``d`` given a voltage map covering at least its neighbours."""
    Y = build_admittance(case) if Y is None else Y
    diag, off = Y.row(d)
    t = t_params_from_row(diag, off, {k: voltages[k] for k in off}, bus=d)
    return circles_from_t(t, p_d, q_d)
