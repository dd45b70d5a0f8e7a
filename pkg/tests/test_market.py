import numpy as np
import pytest

from gridtariff.conic.backends import SolverSettings, Status
from gridtariff.market.clearing import (
    check_exactness,
    clear,
    recover_voltages,
    settlement_quantities,
    write_prices_csv,
)
from gridtariff.market.model import InvalidAssignment
from gridtariff.network.cases import five_bus, five_bus_reserve


def test_reserve_case_prices_and_allocation(reserve_sols):
    sol, _ = reserve_sols
    # surrogate impedances are tuned so node 3 sits between its bid and +1
    assert 30.0 < sol.price(0, 3) < 31.0
    assert sol.value("d", 0, "d1") == pytest.approx(100.0, abs=1e-5)
    assert sol.value("d", 0, "d4") == pytest.approx(0.0, abs=1e-5)
    assert sol.value("g", 0, "g4") == pytest.approx(0.0, abs=1e-5)
    # losses make prices rise away from the substation
    assert sol.price(0, 1) < sol.price(0, 4)


def test_prices_are_nodal_balance_duals(reserve_sols):
    sol, _ = reserve_sols
    for n in (1, 2, 3, 4):
        assert sol.price(0, n) == pytest.approx(sol.dual("pi_p", (0, n)))


def test_optimality_certificates(reserve_sols):
    for sol in reserve_sols:
        assert sol.gap() <= 1e-6
        assert sol.stationarity_residual() <= 1e-6
        assert sol.sign_violation() <= 1e-6
        assert max(sol.complementarity().values()) <= 1e-6


def test_exactness_and_voltages(reserve_sols):
    sol, _ = reserve_sols
    assert check_exactness(sol).passed
    V = recover_voltages(sol)
    assert V[(0, 0)] == 1.0
    for n in range(1, 5):
        assert abs(V[(0, n)]) ** 2 == pytest.approx(sol.W(0, n), rel=1e-8)
    v1, v2 = V[(0, 1)], V[(0, 2)]
    w12 = v1 * np.conj(v2)
    assert w12.real == pytest.approx(sol.value("Wijp", 0, (1, 2)), rel=1e-8)


def test_settlement_consistency(reserve_sols):
    for sol in reserve_sols:
        q = settlement_quantities(sol)
        assert q["rup"][(0, 1)] == pytest.approx(sol.value("rup", 0, 1), abs=1e-6)


def test_zero_load_case_has_zero_flows():
    sol = clear(five_bus(fixed_load=0.0, d_max=0.0, g_max=0.0))
    assert sol.ok
    for ln in sol.case.lines:
        assert sol.flow(0, ln.key) == pytest.approx(0.0, abs=1e-5)


def test_overloaded_feeder_is_infeasible():
    sol = clear(five_bus(fixed_load=600.0, g_max=0.0, f_max=1000.0))
    assert sol.status == Status.INFEASIBLE
    with pytest.raises(ValueError):
        sol.value("p", 0, 1)


def test_expansion_relieves_congestion(m2_case):
    base = clear(m2_case)
    big = clear(m2_case, {(0, 1): 1.0})
    assert base.flow(0, (0, 1)) == pytest.approx(800.0, rel=1e-6)
    assert big.flow_limit((0, 1)) == pytest.approx(1600.0)
    assert big.objective >= base.objective


def test_invalid_assignment(m2_case):
    with pytest.raises(InvalidAssignment):
        clear(m2_case, {(0, 1): 0.3})
    with pytest.raises(InvalidAssignment):
        clear(m2_case, {(7, 8): 0.5})


def test_cvxopt_agrees_with_clarabel():
    case = five_bus_reserve(0.0)
    a = clear(case)
    b = clear(case, settings=SolverSettings(backend="cvxopt"))
    assert b.ok
    assert b.objective == pytest.approx(a.objective, rel=1e-6)
    assert b.price(0, 3) == pytest.approx(a.price(0, 3), abs=1e-4)


def test_price_csv(tmp_path, reserve_sols):
    path = tmp_path / "p.csv"
    write_prices_csv(reserve_sols[0], str(path), ["case test"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# case test" and lines[1] == "t,node,pi_p,pi_q" and len(lines) == 6
