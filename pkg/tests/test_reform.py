from dataclasses import replace

import numpy as np
import pytest

from gridtariff.market.clearing import clear
from gridtariff.market.model import build_parametric
from gridtariff.reform import (
    BigMTable,
    UnboundedProduct,
    assemble_single_level,
    build_dual_block,
    build_strong_duality,
    linearize_products,
    substitute_merchandising,
    verify_lemma1,
)
from gridtariff.reform.blocks import SymRow, evaluate, residual, values_from
from gridtariff.tariff import merchandising_surplus


@pytest.fixture(scope="module")
def half(tariff_sols):
    return tariff_sols[1]  # (0, 1) expanded by 0.5


def _named(rows, name):
    return next(r for r in rows if r.name == name)


def test_dual_block_shape(half):
    ll = half.ll
    rows, cones = build_dual_block(ll)
    assert len(rows) == ll.n
    assert len(cones) == len(ll.cones) == 4
    assert all(len(c.tail) == 3 for c in cones)


def test_import_price_row(half):
    rows, _ = build_dual_block(half.ll)
    r = _named(rows, "dual_p[0,0]")
    # the substation balance multiplier is pinned to minus the import price
    assert r.rhs == pytest.approx(-half.case.prices_by_time[0].c_p0)
    assert len(r.terms) == 1 and list(r.terms.values()) == [1.0]


def test_bid_row_links_price_and_reserve(half):
    ll = half.ll
    r = _named(build_dual_block(ll)[0], "dual_d[0,d1]")
    fams = {ll.rows[s[1]].family: v for s, v in r.terms.items()}
    assert fams == {"pi_p": 1.0, "phi_dp_max": 1.0, "phi_dp_min": -1.0, "rho_up": -1.0, "rho_down": 1.0}
    assert r.rhs == pytest.approx(40.0)


def test_expandable_line_rows_carry_products(half):
    r = _named(build_dual_block(half.ll)[0], "dual_Wijp[0,(0, 1)]")
    prods = r.products()
    assert prods and all(p[0] == "uy" for p in prods)


def test_dual_block_satisfied_at_solution(tariff_sols):
    for sol in tariff_sols:
        v = values_from(sol)
        rows, _ = build_dual_block(sol.ll)
        assert max(residual(r, v) / (1.0 + abs(r.rhs)) for r in rows) <= 1e-6


def test_strong_duality_row(tariff_sols):
    for sol in tariff_sols:
        row = build_strong_duality(sol.ll)
        v = values_from(sol)
        assert residual(row, v) <= 1e-6 * (1.0 + abs(sol.objective))
    # shifting one bound multiplier breaks the row by exactly its coefficient
    sol = tariff_sols[0]
    row = build_strong_duality(sol.ll)
    v = values_from(sol)
    s, coef = next((s, c) for s, c in row.terms.items() if s[0] == "y" and abs(c) > 1.0)
    v[s] += 1.0
    assert evaluate(row.terms, v) == pytest.approx(coef, abs=1e-5 * (1 + abs(sol.objective)))


@pytest.mark.parametrize("which", [0, 2])
def test_linearization_exact_at_vertices(tariff_sols, which):
    sol = tariff_sols[which]  # u = 0 and u = 1
    ll = sol.ll
    rows, _ = build_dual_block(ll)
    rows.append(build_strong_duality(ll))
    amap, lin = linearize_products(ll, rows)
    assert len(amap) > 0
    assert not any(r.products() for r in lin)
    v = values_from(sol, amap)
    worst = max(residual(r, v) / (1.0 + abs(r.rhs) + max(map(abs, r.terms.values()))) for r in lin)
    assert worst <= 1e-6


def test_linearization_rows_bracket_product():
    ll = build_parametric(_m2())
    row = SymRow("r", "eq", {("uy", 0, _row_of(ll, "mu_max")): 1.0})
    amap, lin = linearize_products(ll, [row])
    e = amap.entries[0]
    assert (e.lo, e.hi) == (0.0, ll.M1)
    assert amap.column_of(e.product) == ("aux", 0)
    assert len(lin) == 5
    with pytest.raises(KeyError):
        amap.column_of(("uy", 9, 9))


def test_unbounded_product_raises():
    ll = build_parametric(_m2())
    row = SymRow("r", "eq", {("uy", 0, _row_of(ll, "pi_p")): 1.0})
    with pytest.raises(UnboundedProduct):
        linearize_products(ll, [row])


def test_lemma_on_tariff_solves(tariff_sols):
    for sol in tariff_sols:
        rep = verify_lemma1(sol)
        assert rep.passed(1e-6), rep.max_residual


def test_merchandising_substitution(tariff_sols):
    for sol in tariff_sols:
        terms, const = substitute_merchandising(sol.ll)
        lin = const + evaluate(terms, values_from(sol))
        ms = merchandising_surplus(sol)
        assert lin == pytest.approx(ms.direct, rel=1e-6, abs=1e-4)
        assert ms.discrepancy <= 1e-6


def test_assembled_problem_structure(m2_case):
    slp = assemble_single_level(m2_case)
    prog = slp.program
    assert len(slp.binary_columns) == 12
    assert len(slp.row_groups["one_hot"]) == 4
    assert "chain" not in slp.row_groups and "budget" not in slp.row_groups
    assert len(slp.row_groups["revenue_adequacy"]) == 1
    # every binary product is linearized; no bilinear term survives
    rows = [r for p in prog.products for r in p.rows]
    assert sorted(rows) == sorted(slp.row_groups["linearization"])
    # degenerate bounds collapse to two equalities
    assert all(len(p.rows) == (2 if p.lo == p.hi else 4) for p in prog.products)
    terms, rhs, kind = slp.row_terms("one_hot[0-1]")
    assert kind == "eq" and rhs == 1.0 and set(terms.values()) == {1.0}


def test_chain_rows(m2_case):
    case = replace(m2_case, chain_constraint=True)
    slp = assemble_single_level(case)
    # one row per (line, upstream line) pair on the feeder 0-1-2-3-4
    assert len(slp.row_groups["chain"]) == 0 + 1 + 2 + 3


def test_budget_row(m2_case):
    slp = assemble_single_level(replace(m2_case, k_tot=60.0))
    terms, rhs, kind = slp.row_terms("budget")
    assert kind == "le" and rhs == 60.0


def test_lifted_point_is_feasible(m2_case, tariff_sols):
    from gridtariff.planning import evaluate as score

    slp = assemble_single_level(m2_case)
    sol = tariff_sols[1]
    u = sol.problem.assignment
    ev = score(m2_case, u)
    x = slp.lift(u, ev.solutions, ev.tau)
    res = slp.program.residuals(x)
    scale = 1.0 + np.abs(slp.program.b).max()
    assert res["eq"] <= 1e-6 * scale
    assert res["ineq"] <= 1e-6 * scale
    assert slp.merchandising(x) == pytest.approx(ev.merchandising, rel=1e-9)
    assert slp.investment_cost(u) == pytest.approx(ev.cost.total)


def test_bigm_table(m2_case):
    ll = build_parametric(m2_case)
    tab = BigMTable.from_lower_level(ll)
    assert tab.M1 == ll.M1
    for k in tab.M2:
        assert tab.M2[k] <= 0.0 or tab.M2[k] <= tab.M3[k]
        assert tab.M2[k] <= tab.M3[k] and tab.M4[k] <= tab.M5[k]
    assert all(v > 0 for v in tab.M6.values())
    # larger expansions mean larger admittances and therefore larger bounds
    ms = sorted(m for (key, m) in tab.M6 if key == (0, 1))
    assert tab.M6[((0, 1), ms[0])] < tab.M6[((0, 1), ms[-1])]


def _m2():
    from gridtariff.network.cases import M2_SET, five_bus_tariff

    return five_bus_tariff(M2_SET)


def _row_of(ll, family):
    return next(i for i, r in enumerate(ll.rows) if r.family == family)
