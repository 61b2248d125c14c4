import pytest

from pmuvsi.casefile import load_case
from pmuvsi.netmodel import Branch, Bus, BusKind, NetworkCase, build_admittance
from pmuvsi.powerflow import continuation_power_flow


def two_bus(p_load=0.2, q_load=0.0, y=1.0 + 0.0j):
    return NetworkCase(
        buses=(Bus(1, BusKind.SLACK), Bus(2, BusKind.PQ, p_load=p_load, q_load=q_load)),
        branches=(Branch(1, 2, y),),
    )


@pytest.fixture(scope="session")
def ieee30():
    return load_case("case_ieee30")


@pytest.fixture(scope="session")
def ieee30_Y(ieee30):
    return build_admittance(ieee30)


@pytest.fixture(scope="session")
def three_bus():
    return load_case("three_bus")


@pytest.fixture(scope="session")
def ieee30_cpf(ieee30):
    return continuation_power_flow(ieee30)
