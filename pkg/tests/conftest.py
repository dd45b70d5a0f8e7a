"""Shared fixtures. Expensive solves are session-scoped so every module reuses them."""

from __future__ import annotations

import pytest

from gridtariff.market.clearing import clear
from gridtariff.network.cases import M1_SET, M2_SET, five_bus_ratio, five_bus_reserve, five_bus_tariff, ieee33
from gridtariff.planning import enumerate_oracle, plan

# acceptance-criterion verdicts, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def m1_case():
    return five_bus_tariff(M1_SET)


@pytest.fixture(scope="session")
def m2_case():
    return five_bus_tariff(M2_SET)


@pytest.fixture(scope="session")
def m1_oracle(m1_case):
    return enumerate_oracle(m1_case)


@pytest.fixture(scope="session")
def m2_oracle(m2_case):
    return enumerate_oracle(m2_case)


@pytest.fixture(scope="session")
def m2_plan(m2_case):
    return plan(m2_case)


@pytest.fixture(scope="session")
def reserve_sols():
    return clear(five_bus_reserve(0.0)), clear(five_bus_reserve(5.0))


@pytest.fixture(scope="session")
def ratio_sol():
    return clear(five_bus_ratio(0.75))


@pytest.fixture(scope="session")
def tariff_sols(m2_case):
    return [clear(m2_case, {(0, 1): m}) for m in M2_SET]


@pytest.fixture(scope="session")
def bus33():
    return ieee33()


@pytest.fixture(scope="session")
def bus33_base(bus33):
    return clear(bus33)


@pytest.fixture(scope="session")
def bus33_plan(bus33):
    return plan(bus33)


@pytest.fixture(scope="session")
def market_solutions(reserve_sols, ratio_sol, tariff_sols, bus33_base, bus33_plan):
    """Every optimal lower-level solve used for the identity and duality checks."""
    sols = {"reserve_cup0": reserve_sols[0], "reserve_cup5": reserve_sols[1], "ratio_0.75": ratio_sol}
    sols.update({f"tariff_m{s.problem.assignment[(0, 1)]:g}": s for s in tariff_sols})
    sols["ieee33_base"] = bus33_base
    sols["ieee33_expanded"] = bus33_plan.solutions[0]
    return sols
