import json
from dataclasses import replace

import pytest

from gridtariff.network.case import CaseFormatError, save_case
from gridtariff.planning import plan
from gridtariff.stochastic import (
    BadProbabilities,
    Scenario,
    ScenarioSet,
    apply_overrides,
    assemble_stochastic,
    load_scenarios,
    stochastic_oracle,
    stochastic_plan,
)


def test_probability_validation(m2_case):
    with pytest.raises(BadProbabilities):
        ScenarioSet(m2_case, (Scenario("a", 0.6, m2_case), Scenario("b", 0.6, m2_case)))
    with pytest.raises(BadProbabilities):
        ScenarioSet(m2_case, (Scenario("a", -0.1, m2_case), Scenario("b", 1.1, m2_case)))
    with pytest.raises(BadProbabilities):
        ScenarioSet(m2_case, ())
    with pytest.raises(BadProbabilities):
        ScenarioSet.from_overrides(m2_case, [{"name": "x"}])


def test_topology_must_not_change(m2_case):
    other = replace(m2_case, lines=m2_case.lines[:-1])
    with pytest.raises(CaseFormatError):
        ScenarioSet(m2_case, (Scenario("a", 1.0, other),))


def test_overrides(m2_case):
    c = apply_overrides(m2_case, {
        "bids": {"d1": {"price": 50.0}},
        "fixed_loads": {"2": 123.0},
        "trade_prices": {"0": {"c_p0": 7.0}},
        "k_op": 10.0,
    })
    assert next(b for b in c.bids if b.id == "d1").price == 50.0
    assert c.fixed_load(0, 2) == 123.0
    assert c.prices_by_time[0].c_p0 == 7.0
    assert c.k_op == 10.0
    scaled = apply_overrides(m2_case, {"scale": {"fixed_loads": 2.0, "offers": 0.5}})
    assert scaled.fixed_load(0, 1) == pytest.approx(2.0 * m2_case.fixed_load(0, 1))
    assert scaled.offers[0].p_max == pytest.approx(0.5 * m2_case.offers[0].p_max)
    for bad in ({"bids": {"zz": {}}}, {"colour": 1}, {"scale": {"lines": 2.0}}):
        with pytest.raises(CaseFormatError):
            apply_overrides(m2_case, bad)


def test_single_scenario_equals_deterministic(m2_case, m2_plan):
    p = stochastic_plan(ScenarioSet.single(m2_case))
    assert p.assignment == m2_plan.assignment
    assert p.objective == pytest.approx(m2_plan.objective, rel=1e-9)
    assert p.tau == pytest.approx(m2_plan.tau, rel=1e-9)


def test_duplicated_scenarios_equal_deterministic(m2_case, m2_plan):
    sset = ScenarioSet(m2_case, (Scenario("a", 0.5, m2_case), Scenario("b", 0.5, m2_case)))
    slp = assemble_stochastic(m2_case, sset)
    assert len(slp.blocks) == 2 and len(slp.binary_columns) == 12
    p = stochastic_plan(sset)
    assert p.assignment == m2_plan.assignment
    assert p.objective == pytest.approx(m2_plan.objective, rel=1e-6)


def test_two_scenarios_match_oracle(m2_case):
    sset = ScenarioSet.from_overrides(m2_case, [
        {"name": "high", "probability": 0.3, "overrides": {"scale": {"fixed_loads": 1.2}}},
        {"name": "base", "probability": 0.7},
    ])
    p = stochastic_plan(sset)
    oracle = stochastic_oracle(sset)
    assert p.assignment == oracle.best.assignment
    assert p.objective == pytest.approx(oracle.objective, rel=1e-6)
    # revenue adequacy holds in expectation
    assert p.ledger.profit >= -1e-6


def test_load_scenarios(tmp_path, m2_case):
    save_case(m2_case, tmp_path / "case.json")
    spec = {"base": "case.json", "scenarios": [
        {"name": "a", "probability": 0.25, "overrides": {"k_op": 5.0}},
        {"name": "b", "probability": 0.75},
    ]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    sset = load_scenarios(tmp_path / "s.json")
    assert sset.probabilities == [0.25, 0.75]
    assert sset.scenarios[0].case.k_op == 5.0
