"""Case-file readers and writers.

Two formats are understood:

* MATPOWER ``.m`` case files (``baseMVA``, ``bus``, ``gen`` and ``branch``
  tables; everything else is ignored), and
* the native JSON schema::

    {"base_mva": 100.0,
     "buses": [{"id": 1, "kind": "Slack", "p_inj": 0.0, "q_inj": 0.0,
                "v_spec": 1.0, "shunt_g": 0.0, "shunt_b": 0.0,
                "p_load": 0.0, "q_load": 0.0}, ...],
     "branches": [{"from": 1, "to": 2, "series_admittance": [1.0, -0.5],
                   "charging_b": 0.0, "status": "InService"}, ...]}

  ``p_load``/``q_load``, ``tap``, ``shift``, ``q_min``/``q_max`` and ``v0``
  are optional. Without ``p_load``/``q_load`` a negative injection is read
  as load and a positive one as generation.
"""
from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CaseError
from .netmodel import Branch, BranchStatus, Bus, BusKind, NetworkCase

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS, VM, VA = 0, 1, 2, 3, 4, 5, 7, 8
GEN_BUS, PG, QG, QMAX, QMIN, VG, GEN_STATUS = 0, 1, 2, 3, 4, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body: str) -> np.ndarray:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        rows.append([float(x) for x in chunk.replace(",", " ").split()])
    if not rows:
        return np.zeros((0, 0))
    width = max(len(r) for r in rows)
    if any(len(r) != width for r in rows):
        raise CaseError("ragged MATPOWER table")
    return np.array(rows)


def parse_matpower(text: str, name: str = "") -> NetworkCase:
    text = _strip_comments(text)
    m = _SCALAR_RE.search(text)
    if m is None:
        raise CaseError("mpc.baseMVA not found")
    base = float(m.group(1))
    tables = {k: _parse_matrix(v) for k, v in _MATRIX_RE.findall(text)}
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseError(f"mpc.{key} table not found")
    bus, gen, branch = tables["bus"], tables["gen"], tables["branch"]

    gen_on = gen[gen[:, GEN_STATUS] > 0] if len(gen) else gen
    gens_at: dict[int, np.ndarray] = {}
    for row in gen_on:
        gens_at.setdefault(int(row[GEN_BUS]), []).append(row)

    buses = []
    for row in bus:
        bid = int(row[BUS_I])
        btype = int(row[BUS_TYPE])
        if btype == 4:
            raise CaseError(f"bus {bid} is isolated (type 4); remove it from the case")
        rows = np.array(gens_at.get(bid, []))
        kind = {3: BusKind.SLACK, 2: BusKind.PV, 1: BusKind.PQ}[btype]
        if kind is BusKind.PV and len(rows) == 0:
            kind = BusKind.PQ  # PV bus without a live generator
        if len(rows):
            pg, qg = rows[:, PG].sum() / base, rows[:, QG].sum() / base
            qmax, qmin = rows[:, QMAX].sum() / base, rows[:, QMIN].sum() / base
            vg = float(rows[0, VG])
        else:
            pg = qg = 0.0
            qmax, qmin = np.inf, -np.inf
            vg = float(row[VM])
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                p_load=row[PD] / base,
                q_load=row[QD] / base,
                p_gen=float(pg),
                q_gen=float(qg),
                v_spec=vg if kind is not BusKind.PQ else 1.0,
                shunt_g=row[GS] / base,
                shunt_b=row[BS] / base,
                q_min=float(qmin),
                q_max=float(qmax),
                v0=complex(row[VM] * np.exp(1j * np.deg2rad(row[VA]))),
            )
        )

    branches = []
    for row in branch:
        z = complex(row[BR_R], row[BR_X])
        tap = row[TAP] if row[TAP] != 0 else 1.0
        branches.append(
            Branch(
                from_bus=int(row[F_BUS]),
                to_bus=int(row[T_BUS]),
                series_admittance=1 / z,
                charging_b=float(row[BR_B]),
                status=BranchStatus.IN_SERVICE if row[BR_STATUS] > 0 else BranchStatus.OUTAGED,
                tap=float(tap),
                shift=float(row[SHIFT]),
            )
        )
    return NetworkCase(buses=tuple(buses), branches=tuple(branches), base_mva=base, name=name)


def read_matpower(path) -> NetworkCase:
    path = Path(path)
    return parse_matpower(path.read_text(), name=path.stem)


def _bus_to_dict(b: Bus) -> dict:
    d = {
        "id": b.id,
        "kind": b.kind.value,
        "p_inj": b.p_inj,
        "q_inj": b.q_inj,
        "v_spec": b.v_spec,
        "shunt_g": b.shunt_g,
        "shunt_b": b.shunt_b,
        "p_load": b.p_load,
        "q_load": b.q_load,
    }
    if np.isfinite(b.q_min):
        d["q_min"] = b.q_min
    if np.isfinite(b.q_max):
        d["q_max"] = b.q_max
    if b.v0 != 1:
        d["v0"] = [b.v0.real, b.v0.imag]
    return d


def _bus_from_dict(d: dict) -> Bus:
    p_inj = float(d.get("p_inj", 0.0))
    q_inj = float(d.get("q_inj", 0.0))
    p_load = float(d["p_load"]) if "p_load" in d else max(-p_inj, 0.0)
    q_load = float(d["q_load"]) if "q_load" in d else max(-q_inj, 0.0)
    v0 = d.get("v0", [1.0, 0.0])
    try:
        kind = BusKind(d["kind"])
    except ValueError:
        raise CaseError(f"bus {d.get('id')}: unknown kind {d['kind']!r}") from None
    return Bus(
        id=int(d["id"]),
        kind=kind,
        p_load=p_load,
        q_load=q_load,
        p_gen=p_inj + p_load,
        q_gen=q_inj + q_load,
        v_spec=float(d.get("v_spec", 1.0)),
        shunt_g=float(d.get("shunt_g", 0.0)),
        shunt_b=float(d.get("shunt_b", 0.0)),
        q_min=float(d.get("q_min", -np.inf)),
        q_max=float(d.get("q_max", np.inf)),
        v0=complex(v0[0], v0[1]),
    )


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [_bus_to_dict(b) for b in case.buses],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "series_admittance": [br.series_admittance.real, br.series_admittance.imag],
                "charging_b": br.charging_b,
                "status": br.status.value,
                "tap": br.tap,
                "shift": br.shift,
            }
            for br in case.branches
        ],
    }


def case_from_dict(data: dict) -> NetworkCase:
    try:
        buses = tuple(_bus_from_dict(b) for b in data["buses"])
        branches = tuple(
            Branch(
                from_bus=int(br["from"]),
                to_bus=int(br["to"]),
                series_admittance=complex(*br["series_admittance"]),
                charging_b=float(br.get("charging_b", 0.0)),
                status=BranchStatus(br.get("status", "InService")),
                tap=float(br.get("tap", 1.0)),
                shift=float(br.get("shift", 0.0)),
            )
            for br in data["branches"]
        )
    except KeyError as exc:
        raise CaseError(f"missing field {exc.args[0]!r} in case JSON") from None
    return NetworkCase(buses, branches, float(data.get("base_mva", 100.0)), data.get("name", ""))


def read_json(path) -> NetworkCase:
    path = Path(path)
    case = case_from_dict(json.loads(path.read_text()))
    if not case.name:
        case = NetworkCase(case.buses, case.branches, case.base_mva, path.stem)
    return case


def write_json(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1))


BUNDLED = ("case_ieee30", "case30", "case14", "case118", "case300", "three_bus")


def load_case(ref) -> NetworkCase:
    """Load a case from a path, or by name from the bundled data directory."""
    path = Path(ref)
    if not path.exists():
        data = resources.files("pmuvsi") / "data"
        for suffix in (".m", ".json"):
            cand = data / f"{ref}{suffix}"
            if cand.is_file():
                path = Path(str(cand))
                break
        else:
            raise CaseError(f"case {ref!r} not found (bundled: {', '.join(BUNDLED)})")
    if path.suffix == ".m":
        return read_matpower(path)
    if path.suffix == ".json":
        return read_json(path)
    raise CaseError(f"unsupported case file type {path.suffix!r}")
