"""Static grid description, bus admittance assembly and topology edits.

Everything in here is immutable: load scaling and outages return new
``NetworkCase`` values, so cases can be shared freely between workers.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CaseError, DisconnectedNetworkError


class BusKind(enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class BranchStatus(enum.Enum):
    IN_SERVICE = "InService"
    OUTAGED = "Outaged"


@dataclass(frozen=True)
class Bus:
    """One bus. Powers are in p.u. on the case base, generation positive.

    The net injections ``p_inj``/``q_inj`` are derived from the separate
    generation and load components so that loads and generation can be
    scaled independently.
    """

    id: int
    kind: BusKind
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    v_spec: float = 1.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    q_min: float = -np.inf
    q_max: float = np.inf
    v0: complex = 1.0 + 0.0j

    @property
    def p_inj(self) -> float:
        return self.p_gen - self.p_load

    @property
    def q_inj(self) -> float:
        return self.q_gen - self.q_load


@dataclass(frozen=True)
class Branch:
    """Pi-model branch; ``tap`` and ``shift`` (degrees) model transformers."""

    from_bus: int
    to_bus: int
    series_admittance: complex
    charging_b: float = 0.0
    status: BranchStatus = BranchStatus.IN_SERVICE
    tap: float = 1.0
    shift: float = 0.0

    @property
    def in_service(self) -> bool:
        return self.status is BranchStatus.IN_SERVICE

    def connects(self, a: int, b: int) -> bool:
        return {self.from_bus, self.to_bus} == {a, b}


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        if any(i <= 0 for i in ids):
            raise CaseError("bus ids must be positive integers")
        index = set(ids)
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise CaseError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
            if br.from_bus not in index or br.to_bus not in index:
                raise CaseError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        for b in self.buses:
            if b.kind is not BusKind.PQ and not b.v_spec > 0:
                raise CaseError(f"bus {b.id}: voltage setpoint must be positive")

    @cached_property
    def index(self) -> dict[int, int]:
        """Bus id -> row/column position in matrices and voltage vectors."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.buses[self.index[bus_id]]
        except KeyError:
            raise CaseError(f"unknown bus id {bus_id}") from None

    def kinds(self) -> np.ndarray:
        return np.array([b.kind for b in self.buses], dtype=object)

    def injections(self) -> np.ndarray:
        """Complex net injection per bus (p.u.)."""
        return np.array([complex(b.p_inj, b.q_inj) for b in self.buses])

    @property
    def slack(self) -> Bus:
        slack = [b for b in self.buses if b.kind is BusKind.SLACK]
        if len(slack) != 1:
            raise CaseError(f"expected exactly one slack bus, found {len(slack)}")
        return slack[0]

    def replace_buses(self, buses: Iterable[Bus]) -> "NetworkCase":
        return dataclasses.replace(self, buses=tuple(buses))

    def replace_branches(self, branches: Iterable[Branch]) -> "NetworkCase":
        return dataclasses.replace(self, branches=tuple(branches))


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse bus admittance matrix plus per-row neighbour lists."""

    Y: sp.csr_matrix
    bus_ids: tuple[int, ...]
    neighbor_ids: tuple[tuple[int, ...], ...]
    index: Mapping[int, int] = field(repr=False)

    def row(self, bus_id: int) -> tuple[complex, dict[int, complex]]:
        """Diagonal entry and off-diagonal entries ``{k: Y[d, k]}`` of row d."""
        i = self.index[bus_id]
        start, stop = self.Y.indptr[i], self.Y.indptr[i + 1]
        cols = self.Y.indices[start:stop]
        vals = self.Y.data[start:stop]
        diag = 0j
        off = {}
        for c, v in zip(cols, vals):
            if c == i:
                diag = complex(v)
            else:
                off[self.bus_ids[c]] = complex(v)
        return diag, off

    def neighbors(self, bus_id: int) -> set[int]:
        return set(self.neighbor_ids[self.index[bus_id]])

    def toarray(self) -> np.ndarray:
        return self.Y.toarray()


def _branch_arrays(case: NetworkCase):
    idx = case.index
    live = [br for br in case.branches if br.in_service]
    f = np.array([idx[br.from_bus] for br in live], dtype=int)
    t = np.array([idx[br.to_bus] for br in live], dtype=int)
    ys = np.array([br.series_admittance for br in live], dtype=complex)
    bc = np.array([br.charging_b for br in live], dtype=float)
    tap = np.array([br.tap * np.exp(1j * np.deg2rad(br.shift)) for br in live], dtype=complex)
    return f, t, ys, bc, tap


def check_connected(case: NetworkCase) -> None:
    f, t, *_ = _branch_arrays(case)
    n = case.n_bus
    adj = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        islands = [
            sorted(case.buses[i].id for i in np.flatnonzero(labels == c)) for c in range(n_comp)
        ]
        smallest = min(islands, key=len)
        raise DisconnectedNetworkError(
            f"network has {n_comp} islands; e.g. buses {smallest[:10]} are cut off"
        )


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble Y with the standard pi/transformer two-port model."""
    case.slack  # raises on zero or duplicate slack
    check_connected(case)
    n = case.n_bus
    f, t, ys, bc, tap = _branch_arrays(case)

    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap

    ysh = np.array([complex(b.shunt_g, b.shunt_b) for b in case.buses])
    rows = np.concatenate([f, t, f, t, np.arange(n)])
    cols = np.concatenate([f, t, t, f, np.arange(n)])
    vals = np.concatenate([yff, ytt, yft, ytf, ysh])
    Y = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Y.sum_duplicates()

    # neighbour sets come from the branch list, so a branch whose entries
    # happen to cancel numerically is still a neighbour
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in zip(f, t):
        nbrs[a].add(case.buses[b].id)
        nbrs[b].add(case.buses[a].id)
    return AdmittanceMatrix(
        Y=Y,
        bus_ids=case.bus_ids,
        neighbor_ids=tuple(tuple(sorted(s)) for s in nbrs),
        index=dict(case.index),
    )


def neighbors(case: NetworkCase, d: int) -> set[int]:
    """Buses adjacent to ``d`` through in-service branches."""
    case.bus(d)
    out = set()
    for br in case.branches:
        if not br.in_service:
            continue
        if br.from_bus == d:
            out.add(br.to_bus)
        elif br.to_bus == d:
            out.add(br.from_bus)
    return out


def scale_loads(case: NetworkCase, lam: float, load_buses: Sequence[int] | None = None) -> NetworkCase:
    """Scale loads (optionally only at ``load_buses``) and non-slack generation by ``lam``.

    The slack keeps its setpoint and picks up whatever imbalance is left.
    ``lam == 0`` gives the no-load case; ``lam == 1`` returns the case unchanged.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"load scaling factor must be finite and >= 0, got {lam}")
    if lam == 1:
        return case
    chosen = None if load_buses is None else set(load_buses)
    if chosen is not None:
        unknown = chosen - set(case.index)
        if unknown:
            raise CaseError(f"unknown bus ids in load set: {sorted(unknown)}")
    new = []
    for b in case.buses:
        upd = {}
        if chosen is None or b.id in chosen:
            upd.update(p_load=b.p_load * lam, q_load=b.q_load * lam)
        if b.kind is not BusKind.SLACK:
            upd.update(p_gen=b.p_gen * lam, q_gen=b.q_gen * lam)
        new.append(dataclasses.replace(b, **upd))
    return case.replace_buses(new)


def apply_outage(case: NetworkCase, from_bus: int, to_bus: int) -> NetworkCase:
    """Take the (first in-service) branch between the two buses out of service."""
    case.bus(from_bus)
    case.bus(to_bus)
    matches = [i for i, br in enumerate(case.branches) if br.connects(from_bus, to_bus)]
    if not matches:
        raise CaseError(f"no branch between buses {from_bus} and {to_bus}")
    live = [i for i in matches if case.branches[i].in_service]
    if not live:
        raise CaseError(f"branch {from_bus}-{to_bus} is already outaged")
    branches = list(case.branches)
    branches[live[0]] = dataclasses.replace(branches[live[0]], status=BranchStatus.OUTAGED)
    return case.replace_branches(branches)
