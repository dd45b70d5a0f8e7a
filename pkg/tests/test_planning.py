from dataclasses import replace

import pytest

from gridtariff.conic.bnb import SolveOptions
from gridtariff.network.cases import M2_SET, five_bus_tariff, ieee33
from gridtariff.network.topology import expanded_params
from gridtariff.planning import (
    SearchSpaceTooLarge,
    admissible,
    chain_ok,
    enumerate_oracle,
    evaluate,
    plan,
    rebase,
    rebase_line,
    recalibrate,
    search_space,
    tie_key,
)


def test_m2_plan_matches_oracle(m2_plan, m2_oracle):
    assert m2_plan.status == "Optimal"
    assert m2_plan.assignment == m2_oracle.best.assignment
    assert m2_plan.objective == pytest.approx(m2_oracle.objective, rel=1e-6)
    assert m2_plan.expanded == {(0, 1): 0.5}


def test_plan_decomposition_adds_up(m2_plan):
    d = m2_plan.decomposition
    welfare = d["flexible_surplus"] + d["node0_trade"] + d["reserve_revenue"]
    assert welfare - d["tariff_total"] - d["investment_cost"] == pytest.approx(m2_plan.objective, rel=1e-9)
    assert m2_plan.ledger.profit == pytest.approx(0.0, abs=1e-6) or m2_plan.tau == 0.0


def test_oracle_table_is_complete(m2_case, m2_oracle):
    assert len(m2_oracle.table) == search_space(m2_case) == 81
    feasible = [e for e in m2_oracle.table if e.feasible]
    assert max(e.objective for e in feasible) == m2_oracle.objective


def test_search_space_cap():
    with pytest.raises(SearchSpaceTooLarge):
        enumerate_oracle(ieee33(), cap=1000)


def test_chain_and_budget(m2_case):
    assert chain_ok(m2_case, {(0, 1): 0.5, (1, 2): 1.0})
    assert not chain_ok(m2_case, {(1, 2): 0.5})
    chained = replace(m2_case, chain_constraint=True)
    assert not admissible(chained, {(1, 2): 0.5})
    tight = replace(m2_case, k_tot=100.0)
    assert admissible(tight, {(0, 1): 0.5})
    assert not admissible(tight, {(0, 1): 0.5, (1, 2): 0.5})
    ev = evaluate(tight, {(0, 1): 1.0, (1, 2): 1.0})
    assert not ev.feasible and "budget" in ev.reason


def test_chain_constraint_respected_by_plan(m2_case):
    res = plan(replace(m2_case, chain_constraint=True))
    assert chain_ok(m2_case, res.assignment)


def test_tie_key_orders_by_line():
    case = five_bus_tariff(M2_SET)
    assert tie_key(case, {}) < tie_key(case, {(3, 4): 0.5}) < tie_key(case, {(0, 1): 0.5})


def test_rebase_keeps_physical_meaning(m2_case):
    ln = m2_case.lines[0]
    new = rebase_line(ln, 0.5)
    assert new.a0 == pytest.approx(1.5 * ln.a0)
    assert new.f_max == pytest.approx(1.5 * ln.f_max)
    assert [o.m for o in new.expansions] == pytest.approx([0.0, 1.0 / 3.0])
    # building the remaining step lands on the original m = 1 line
    full = expanded_params(ln, 1.0)
    step = expanded_params(new, new.expansions[1].m)
    assert step.a == pytest.approx(full.a)
    assert step.fixed_cost + expanded_params(ln, 0.5).fixed_cost == pytest.approx(full.fixed_cost)
    assert rebase_line(ln, 0.0) is ln
    assert rebase(m2_case, {}).lines == m2_case.lines


def test_recalibration_without_shortfall(m2_case, m2_plan):
    rec = recalibrate(m2_case, m2_case, m2_plan)
    assert rec.shortfall == 0.0 and rec.plan is m2_plan


def test_recalibration_recovers_shortfall(m2_case, m2_plan):
    realized = replace(
        m2_case,
        bids=tuple(replace(b, p_max=0.5 * b.p_max, p_min=0.5 * b.p_min) for b in m2_case.bids),
        offers=tuple(replace(o, p_max=0.5 * o.p_max, p_min=0.5 * o.p_min) for o in m2_case.offers),
    )
    rec = recalibrate(m2_case, realized, m2_plan, SolveOptions(time_limit=120))
    assert rec.shortfall > 0.0
    assert rec.case.k_op == pytest.approx(realized.k_op + rec.shortfall)
    assert rec.case.lines[0].a0 == pytest.approx(1.5 * m2_case.lines[0].a0)
    new = rec.plan
    assert new.ledger.profit >= -1e-6
    assert new.ledger.k_op == pytest.approx(rec.shortfall)

    fixed = recalibrate(m2_case, realized, m2_plan, SolveOptions(time_limit=120), shortfall=50.0)
    assert fixed.shortfall == 50.0
    assert fixed.plan.tau > 0.0
    assert fixed.plan.ledger.profit == pytest.approx(0.0, abs=1e-6)
