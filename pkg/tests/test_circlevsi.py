import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from pmuvsi.circlevsi import (
    CircleGeometry,
    Intersection,
    TParams,
    bus_circles,
    circle_matrix,
    circles_from_t,
    classify_intersection,
    compute_t_params,
    delta_components,
    delta_star_geometric,
    no_load_reference,
    pencil_determinant,
    pv_bus_vsi,
    t_params_from_row,
    voltage_circle,
    vsi,
)
from pmuvsi.errors import DegenerateCircleError, InfeasibleCircleError
from pmuvsi.netmodel import BusKind, apply_outage, build_admittance, scale_loads
from pmuvsi.powerflow import solve_power_flow

FLAT = {1: 1 + 0j, 2: 1 + 0j}


def circ(x, y, r):
    return CircleGeometry((float(x), float(y)), float(r))


def dstar(a, b):
    return delta_components(circle_matrix(a), circle_matrix(b)).delta_star


# -- worked examples ----------------------------------------------------------


def test_three_bus_t_params(three_bus):
    t = compute_t_params(build_admittance(three_bus), 3, FLAT)
    assert (t.t1, t.t2, t.t3, t.t4) == (2, -2, 1, 1)


def test_zero_neighbour_voltages(three_bus):
    t = compute_t_params(build_admittance(three_bus), 3, {1: 0j, 2: 0j})
    assert (t.t1, t.t2, t.t3, t.t4) == (2, 0, 0, 1)


def test_t_params_need_exact_neighbours(three_bus):
    Y = build_admittance(three_bus)
    with pytest.raises(KeyError):
        compute_t_params(Y, 3, {1: 1 + 0j})
    with pytest.raises(KeyError):
        compute_t_params(Y, 3, {1: 1 + 0j, 2: 1 + 0j, 3: 1 + 0j})


def test_three_bus_p_circle():
    gp, gq = circles_from_t(TParams(2, -2, 1, 1), 0.0, 0.0)
    assert gp.center == (0.5, -0.25)
    assert gp.radius == pytest.approx(math.sqrt(5 / 16), abs=1e-15)
    assert gq.center == (0.5, 1.0)
    assert gq.radius == pytest.approx(math.sqrt(5 / 4), abs=1e-15)


def test_zero_circles():
    gp, gq = circles_from_t(TParams(2, 0, 0, 1), 0.0, 0.0)
    assert gp.center == (0, 0) and gq.center == (0, 0)
    assert gp.radius == 0 and gq.radius == 0


def test_negative_radicand_is_infeasible():
    with pytest.raises(InfeasibleCircleError):
        circles_from_t(TParams(2, -2, 1, 1), -1.0, 0.0)


def test_degenerate_row():
    with pytest.raises(DegenerateCircleError):
        t_params_from_row(-5j, {2: 5j}, {2: 1 + 0j})


def test_ieee30_lossless_buses_are_degenerate(ieee30, ieee30_Y):
    for d in (9, 11, 13):
        with pytest.raises(DegenerateCircleError):
            no_load_reference(ieee30, d, ieee30_Y)


def test_circle_matrix_examples():
    m = circle_matrix(circ(0, 0, 1))
    assert (m.A, m.B, m.C, m.D) == (1, 0, 0, -1)
    m = circle_matrix(circ(3, 0, 2))
    assert (m.A, m.B, m.C, m.D) == (1, -3, -3, 5)
    assert m.det == -4


def test_delta_examples():
    assert dstar(circ(0, 0, 1), circ(3, 0, 2)) == 0
    assert dstar(circ(0, 0, 1), circ(1, 0, 1)) == 0.75
    assert dstar(circ(0, 0, 1), circ(5, 0, 1)) == 1 - (23 / 2) ** 2


def test_classify_examples():
    assert classify_intersection(circ(0, 0, 1), circ(3, 0, 2)) is Intersection.ONE_POINT
    assert classify_intersection(circ(0, 0, 1), circ(1, 0, 1)) is Intersection.TWO_POINTS
    assert classify_intersection(circ(0, 0, 1), circ(0, 0, 3)) is Intersection.NONE
    assert classify_intersection(circ(0, 0, 1), circ(1, 0, 2)) is Intersection.ONE_POINT


def test_three_bus_reference(three_bus):
    ref = no_load_reference(three_bus, 3)
    # t = (2, -2, 1, 1): the two no-load circles cut at right angles
    assert ref == pytest.approx(5 / 16 * 5 / 4, rel=1e-12)


def test_flat_no_load_index_is_one(three_bus):
    assert vsi(three_bus, 3, FLAT, 0.0, 0.0).value == 1.0


def test_reference_depends_on_topology_only(three_bus, ieee30):
    ref = no_load_reference(three_bus, 3)
    assert no_load_reference(scale_loads(three_bus, 3.0), 3) == ref
    # scaling a whole row leaves the circles alone, so use an uneven row
    ref15 = no_load_reference(ieee30, 15)
    assert no_load_reference(apply_outage(ieee30, 15, 23), 15) != pytest.approx(ref15, rel=1e-3)


def test_pv_variant(three_bus):
    assert pv_bus_vsi(three_bus, 3, FLAT, 0.0, 1.0).value == 1.0
    res = pv_bus_vsi(three_bus, 3, {1: 1.0 + 0j, 2: 0.95 - 0.1j}, -0.2, 0.0, reference=1.0)
    comp = delta_components(
        circle_matrix(circles_from_t(compute_t_params(build_admittance(three_bus), 3, {1: 1.0 + 0j, 2: 0.95 - 0.1j}), -0.2, 0)[0]),
        circle_matrix(voltage_circle(0.0)),
    )
    assert res.raw == pytest.approx(-comp.delta_pq**2, abs=1e-15)
    assert res.raw <= 0


def test_pv_bus_index_decreases_along_sweep(ieee30, ieee30_Y, ieee30_cpf):
    values = []
    for lam, snap in ieee30_cpf.points:
        case = scale_loads(ieee30, lam)
        b = case.bus(2)
        _, off = ieee30_Y.row(2)
        res = pv_bus_vsi(case, 2, {k: snap[k] for k in off}, b.p_inj, b.v_spec, Y=ieee30_Y)
        gp = circles_from_t(compute_t_params(ieee30_Y, 2, {k: snap[k] for k in off}), b.p_inj, 0)[0]
        geom = classify_intersection(gp, voltage_circle(b.v_spec))
        assert (res.raw > 0) == (geom is Intersection.TWO_POINTS)
        values.append(res.value)
    assert np.all(np.diff(values) < 0)


def test_solution_on_circles(ieee30, ieee30_Y, ieee30_cpf):
    checked = 0
    for lam, snap in ieee30_cpf.points:
        case = scale_loads(ieee30, lam)
        volts = snap.as_dict()
        for b in case.buses:
            if b.kind is not BusKind.PQ or b.id == 9:  # bus 9: lossless row
                continue
            gp, gq = bus_circles(case, b.id, volts, b.p_inj, b.q_inj, ieee30_Y)
            assert abs(gp.residual(volts[b.id])) < 1e-7
            assert abs(gq.residual(volts[b.id])) < 1e-7
            checked += 1
    assert checked > 300


def test_base_case_t_params_reproduce_injection(ieee30, ieee30_Y):
    snap = solve_power_flow(ieee30)
    volts = snap.as_dict()
    for b in ieee30.buses:
        if b.kind is not BusKind.PQ or b.id == 9:
            continue
        _, off = ieee30_Y.row(b.id)
        t = compute_t_params(ieee30_Y, b.id, {k: volts[k] for k in off})
        v = volts[b.id]
        p = t.t1 * abs(v) ** 2 + t.t2 * v.real + t.t3 * v.imag
        q = t.t4 * abs(v) ** 2 - t.t3 * v.real + t.t2 * v.imag
        assert p == pytest.approx(b.p_inj, abs=1e-8)
        assert q == pytest.approx(b.q_inj, abs=1e-8)


# -- properties ---------------------------------------------------------------

EPS = float(np.finfo(float).eps)
coord = st.floats(-10, 10, allow_nan=False)
radius = st.floats(0.01, 10, allow_nan=False)


@st.composite
def circle_pairs(draw):
    """Random pairs, plus exactly tangent and concentric ones."""
    a = circ(draw(coord), draw(coord), draw(radius))
    rb = draw(radius)
    mode = draw(st.sampled_from(["free", "outer", "inner", "concentric"]))
    ang = draw(st.floats(0, 2 * math.pi))
    if mode == "free":
        d = draw(st.floats(0, 25))
    elif mode == "outer":
        d = a.radius + rb
    elif mode == "inner":
        d = abs(a.radius - rb)
    else:
        d = 0.0
    b = circ(a.center[0] + d * math.cos(ang), a.center[1] + d * math.sin(ang), rb)
    return mode, a, b


@settings(max_examples=10_000, deadline=None)
@given(circle_pairs())
def test_sign_matches_geometry(pair):
    mode, a, b = pair
    d = abs(a.gamma - b.gamma)
    lo, hi = abs(a.radius - b.radius), a.radius + b.radius
    ds = dstar(a, b)
    cls = classify_intersection(a, b)
    # Delta* = (hi^2 - d^2)(d^2 - lo^2) / 4; scale by the same factors with plus signs
    # plus the rounding floor of the matrix entries, which grow like |gamma|^2
    scale = (hi**2 + d**2) * (d**2 + lo**2) / 4
    floor = 64 * EPS * (abs(a.gamma) ** 2 + abs(b.gamma) ** 2 + a.radius**2 + b.radius**2) ** 2
    if mode in ("outer", "inner") and d > 1e-6:
        assert cls is Intersection.ONE_POINT
        assert abs(ds) < 1e-9 * scale + floor
        return
    if mode == "concentric":
        assume(lo > 1e-6)
        assert cls is Intersection.NONE and ds < 0
        return
    margin = min(abs(d - hi), abs(d - lo)) / max(1.0, hi)
    assume(margin > 1e-6)
    if cls is Intersection.TWO_POINTS:
        assert ds > 0
    else:
        assert cls is Intersection.NONE and ds < 0


@settings(max_examples=2000, deadline=None)
@given(coord, coord, radius, coord, coord, radius, st.floats(-10, 10), st.floats(-10, 10))
def test_determinant_oracle(x1, y1, r1, x2, y2, r2, l1, l2):
    cp, cq = circle_matrix(circ(x1, y1, r1)), circle_matrix(circ(x2, y2, r2))
    comp = delta_components(cp, cq)
    direct = pencil_determinant(cp, cq, l1, l2)
    form = comp.delta_p * l1**2 + comp.delta_q * l2**2 + 2 * comp.delta_pq * l1 * l2
    # relative to the size of the terms being added
    terms = np.abs(cp.as_array()).max() * abs(l1) + np.abs(cq.as_array()).max() * abs(l2)
    assert abs(direct - form) <= 1e-9 * max(1.0, terms**2)
    assert np.allclose(comp.form(), comp.form().T)


@settings(max_examples=2000, deadline=None)
@given(coord, coord, radius, coord, coord, radius)
def test_identities(x1, y1, r1, x2, y2, r2):
    a, b = circ(x1, y1, r1), circ(x2, y2, r2)
    comp = delta_components(circle_matrix(a), circle_matrix(b))
    # cancellation in D - |b|^2/4 is bounded by the size of |center|^2
    sa = r1**2 + abs(a.gamma) ** 2
    sb = r2**2 + abs(b.gamma) ** 2
    assert abs(comp.delta_p + r1**2) <= 1e-10 * sa
    assert abs(comp.delta_q + r2**2) <= 1e-10 * sb
    assert comp.delta_star == pytest.approx(comp.delta_p * comp.delta_q - comp.delta_pq * comp.delta_pq, rel=1e-14)
    d2 = abs(a.gamma - b.gamma) ** 2
    geo = delta_star_geometric(a, b)
    assert abs(comp.delta_star - geo) <= 1e-9 * (r1**2 + r2**2 + d2 + sa + sb) ** 2
    assert circle_matrix(a).det == pytest.approx(-(r1**2), abs=1e-10 * sa)


@settings(max_examples=300, deadline=None)
@given(coord, coord, radius)
def test_circle_matrix_is_hermitian(x, y, r):
    m = circle_matrix(circ(x, y, r))
    assert m.A == 1 and m.C == np.conj(m.B)
    arr = m.as_array()
    assert np.array_equal(arr, arr.conj().T)


@settings(max_examples=300, deadline=None)
@given(st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2), st.floats(-1, 1), st.floats(-1, 1))
def test_vsi_uses_only_neighbours(three_bus, v1, v2, p, q):
    Y = build_admittance(three_bus)
    try:
        a = vsi(three_bus, 3, {1: v1, 2: v2}, p, q, Y=Y)
    except InfeasibleCircleError:
        return
    gp, gq = bus_circles(three_bus, 3, {1: v1, 2: v2, 3: 123.0 + 9j}, p, q, Y)
    assert a.raw == delta_components(circle_matrix(gp), circle_matrix(gq)).delta_star
