import itertools

import numpy as np
import pytest

from gridtariff.conic.backends import SolverSettings, Status, solve_relaxation
from gridtariff.conic.bnb import BnBStatus, SolveOptions, branch_and_bound
from gridtariff.conic.program import FixingInfeasible, ProgramBuilder, fix_columns, write_cbf
from gridtariff.planning import build_single_level

BACKENDS = ["clarabel", "cvxopt"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_lp(backend):
    pb = ProgramBuilder()
    x = pb.var("x")
    pb.le({x: -1.0}, -3.0)  # x >= 3
    pb.minimize({x: 1.0})
    res = solve_relaxation(pb.build(), SolverSettings(backend=backend))
    assert res.status == Status.OPTIMAL
    assert res.objective == pytest.approx(3.0, abs=1e-7)


@pytest.mark.parametrize("backend", BACKENDS)
def test_norm_cone(backend):
    pb = ProgramBuilder()
    t, x, y = pb.var("t"), pb.var("x"), pb.var("y")
    pb.eq({x: 1.0}, 3.0)
    pb.eq({y: 1.0}, 4.0)
    pb.soc([({t: 1.0}, 0.0), ({x: 1.0}, 0.0), ({y: 1.0}, 0.0)])
    pb.minimize({t: 1.0})
    res = solve_relaxation(pb.build(), SolverSettings(backend=backend))
    assert res.objective == pytest.approx(5.0, abs=1e-7)


def test_infeasible_lp():
    pb = ProgramBuilder()
    x = pb.var("x", 0.0, 1.0)
    pb.le({x: -1.0}, -2.0)
    pb.minimize({x: 1.0})
    assert solve_relaxation(pb.build()).status == Status.INFEASIBLE


def test_unknown_backend():
    pb = ProgramBuilder()
    pb.var("x", 0.0, 1.0)
    with pytest.raises(ValueError):
        solve_relaxation(pb.build(), SolverSettings(backend="nope"))


def _knapsack():
    values, weights, cap = [6.0, 5.0, 8.0, 9.0, 6.0], [2.0, 3.0, 6.0, 7.0, 5.0], 13.0
    pb = ProgramBuilder()
    xs = [pb.var(f"x{i}", 0.0, 1.0, integer=True) for i in range(5)]
    pb.le(dict(zip(xs, weights)), cap)
    pb.minimize({x: -v for x, v in zip(xs, values)})
    best = min(
        -sum(v * b for v, b in zip(values, bits))
        for bits in itertools.product((0, 1), repeat=5)
        if sum(w * b for w, b in zip(weights, bits)) <= cap
    )
    return pb.build(), best


@pytest.mark.parametrize("branching", ["group", "binary"])
@pytest.mark.parametrize("threads", [1, 3])
def test_bnb_matches_brute_force(branching, threads):
    prog, best = _knapsack()
    res = branch_and_bound(prog, SolveOptions(branching=branching, threads=threads, audit=True))
    assert res.status == BnBStatus.OPTIMAL
    assert res.objective == pytest.approx(best, abs=1e-6)
    assert res.bound <= res.objective + res.gap + 1e-9
    assert max(res.audit.values()) <= 1e-6
    assert res.nodes == sum(r.status != "pruned" or r.objective == r.objective for r in res.log)


def test_bnb_infeasible():
    pb = ProgramBuilder()
    x = pb.var("x", 0.0, 1.0, integer=True)
    pb.eq({x: 1.0}, 0.5)
    pb.minimize({x: 1.0})
    assert branch_and_bound(pb.build()).status == BnBStatus.INFEASIBLE


def test_bnb_node_limit():
    prog, _ = _knapsack()
    res = branch_and_bound(prog, SolveOptions(node_limit=1))
    assert res.status in (BnBStatus.LIMIT_REACHED, BnBStatus.OPTIMAL)
    assert res.nodes <= 1


def test_bnb_log_file(tmp_path):
    prog, _ = _knapsack()
    path = tmp_path / "log.csv"
    branch_and_bound(prog, SolveOptions(log_path=str(path)))
    assert path.read_text().startswith("node,parent,depth,bound")


@pytest.mark.parametrize("bad", [dict(node_limit=0), dict(time_limit=-1.0), dict(gap_rel=-1.0), dict(branching="x")])
def test_options_validated(bad):
    with pytest.raises(ValueError):
        SolveOptions(**bad)


def test_fix_columns():
    pb = ProgramBuilder()
    u, x = pb.var("u", 0.0, 1.0, integer=True), pb.var("x")
    pb.le({x: 1.0, u: -2.0}, 0.0)  # x <= 2u
    pb.minimize({x: -1.0})
    prog = pb.build()
    red, info = fix_columns(prog, {u: 1.0})
    res = solve_relaxation(red)
    assert info.lift(res.x)[x] == pytest.approx(2.0, abs=1e-7)
    pb2 = ProgramBuilder()
    a = pb2.var("a", 0.0, 1.0)
    pb2.eq({a: 1.0}, 1.0)
    with pytest.raises(FixingInfeasible):
        fix_columns(pb2.build(), {a: 0.0})


def test_relaxation_bounds_integer_solutions(m2_case, m2_oracle):
    slp = build_single_level(m2_case)
    res = solve_relaxation(slp.program)
    assert res.status == Status.OPTIMAL
    # minimization of -objective: relaxation must not exceed the best integer point
    assert res.objective <= -m2_oracle.objective + 1e-5 * (1 + abs(m2_oracle.objective))


def test_cbf_export(tmp_path, m2_case):
    slp = build_single_level(m2_case)
    path = tmp_path / "p.cbf"
    write_cbf(slp.program, str(path))
    text = path.read_text()
    assert "VER\n3" in text and "INT\n12" in text
    assert int(text.split("VAR\n")[1].split()[0]) == slp.program.n


def test_program_residuals():
    pb = ProgramBuilder()
    x = pb.var("x", 0.0, 1.0)
    pb.eq({x: 1.0}, 0.5)
    prog = pb.build()
    prog.check()
    r = prog.residuals(np.array([0.7]))
    assert r["eq"] == pytest.approx(0.2)
