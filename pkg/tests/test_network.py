import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridtariff.network.case import (
    CaseFormatError,
    ExpansionOption,
    Line,
    case_from_dict,
    case_to_dict,
    load_case,
    save_case,
)
from gridtariff.network.cases import five_bus, five_bus_tariff, ieee33
from gridtariff.network.topology import UnknownExpansion, expanded_params, path_to_root, subtree_nodes, validate_case


def test_bundled_cases_validate():
    for case in (five_bus(), five_bus_tariff(), ieee33()):
        assert validate_case(case).ok, str(validate_case(case))


def test_cycle_is_reported():
    c = five_bus()
    extra = replace(c.lines[0], from_node=4, to_node=1)
    rep = validate_case(replace(c, lines=c.lines + (extra,)))
    assert not rep.ok
    assert "CyclicTopology" in rep.kinds() or "DuplicateLine" in rep.kinds()


def test_unknown_node_and_bad_bounds():
    c = five_bus()
    bad = replace(c.lines[1], to_node=9, a0=-1.0)
    rep = validate_case(replace(c, lines=(c.lines[0], bad) + c.lines[2:]))
    assert {"UnknownNode", "BoundViolation"} <= rep.kinds()


def test_missing_zero_option():
    c = five_bus()
    ln = replace(c.lines[0], expansions=(ExpansionOption(0.5),))
    assert "BoundViolation" in validate_case(replace(c, lines=(ln,) + c.lines[1:])).kinds()


def test_paths_and_subtrees():
    c = five_bus()
    assert path_to_root(c, 3) == [(2, 3), (1, 2), (0, 1)]
    assert subtree_nodes(c, 2) == {2, 3, 4}


def test_expanded_params():
    ln = five_bus_tariff().lines[0]
    ep = expanded_params(ln, 0.5)
    assert ep.a == pytest.approx(1.5 * ln.a0)
    assert ep.f_add == pytest.approx(400.0)
    assert (ep.fixed_cost, ep.variable_cost) == pytest.approx((50.0, 40.0))
    with pytest.raises(UnknownExpansion):
        expanded_params(ln, 0.3)


def test_ieee33_is_seeded():
    assert ieee33(7).digest() == ieee33(7).digest()
    assert ieee33(7).digest() != ieee33(8).digest()


def test_roundtrip_file(tmp_path):
    c = ieee33()
    save_case(c, tmp_path / "c.json")
    back = load_case(tmp_path / "c.json")
    assert back == c and back.digest() == c.digest()


def test_malformed_file():
    d = case_to_dict(five_bus())
    del d["lines"][0]["a0"]
    with pytest.raises(CaseFormatError):
        case_from_dict(d)
    with pytest.raises(CaseFormatError):
        case_from_dict(json.loads('{"nodes": 3}'))


@settings(max_examples=30, deadline=None)
@given(
    load=st.floats(0.0, 500.0, allow_nan=False),
    price=st.floats(0.0, 100.0, allow_nan=False),
    k_op=st.floats(0.0, 1e4, allow_nan=False),
)
def test_roundtrip_property(load, price, k_op):
    c = five_bus(fixed_load=load, c_p0=price, k_op=k_op, m_set=(0.0, 0.5))
    assert case_from_dict(json.loads(json.dumps(case_to_dict(c)))) == c


def test_line_key():
    assert Line(2, 3, 1.0, 1.0, 10.0, 10.0).key == (2, 3)
