"""Fixed-u market clearing: build, solve, and inspect the SOCP."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from ..conic.backends import RelaxationResult, SolverSettings, Status, solve_relaxation
from ..conic.program import ConicProgram, ProgramBuilder
from ..network.case import NetworkCase
from ..network.topology import tree_of
from .model import InvalidAssignment, LowerLevel, build_parametric, fixed_rows

__all__ = [
    "MarketProblem",
    "MarketSolution",
    "ExactnessReport",
    "ExactnessViolated",
    "ConsistencyViolation",
    "build_lower_level",
    "solve_market",
    "check_exactness",
    "recover_voltages",
    "settlement_quantities",
    "InvalidAssignment",
]


@dataclass(frozen=True)
class MarketProblem:
    ll: LowerLevel
    uvec: np.ndarray
    program: ConicProgram
    row_pos: np.ndarray  # model row -> program row
    cone_pos: np.ndarray  # model cone -> first program row of its block
    exprs: tuple  # substituted (lin, const) per model row

    @property
    def case(self) -> NetworkCase:
        return self.ll.case

    @property
    def assignment(self) -> dict[tuple[int, int], float]:
        return self.ll.assignment_of(self.uvec)

    def n_cones_per_period(self) -> int:
        return len(self.ll.cones) // max(1, len(self.case.periods))


def build_lower_level(case: NetworkCase, u: Mapping | None = None, ll: LowerLevel | None = None) -> MarketProblem:
    """Lower-level program for a one-hot expansion choice ``u`` ({line key: m}; default all m = 0)."""
    if ll is None:
        ll = build_parametric(case)
    uvec = ll.binary_vector(u)
    exprs = fixed_rows(ll, uvec)
    pb = ProgramBuilder()
    for sym, t, key in ll.names:
        pb.var(f"{sym}[{t},{key}]")
    refs = []
    for r, (lin, const) in zip(ll.rows, exprs):
        name = f"{r.family}{list(r.key)}"
        # expr(x) = lin·x + const (==|<=) 0  ->  lin·x (==|<=) -const
        refs.append(pb.eq(lin, -const, name) if r.sense == "eq" else pb.le(lin, -const, name))
    crefs = [pb.soc([cn.t, *cn.z], f"soc{list(cn.key)}") for cn in ll.cones]
    pb.minimize({c: -v for c, v in ll.objective.items()})
    prog = pb.build()
    row_pos = np.array([pb.row_index(r) for r in refs], dtype=int)
    cone_pos = np.array([pb.row_index(r) for r in crefs], dtype=int)
    return MarketProblem(ll, uvec, prog, row_pos, cone_pos, tuple(exprs))


@dataclass
class MarketSolution:
    problem: MarketProblem
    status: Status
    x: np.ndarray | None = None
    y: np.ndarray | None = None  # one dual per model row, in the row's own orientation
    gamma: np.ndarray | None = None
    eta: np.ndarray | None = None  # (n_cones, 3)
    objective: float = float("nan")  # maximized welfare
    dual_objective: float = float("nan")
    raw: RelaxationResult | None = None

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def case(self) -> NetworkCase:
        return self.problem.case

    @property
    def ll(self) -> LowerLevel:
        return self.problem.ll

    def _need(self) -> None:
        if not self.ok:
            raise ValueError(f"no solution values for status {self.status.value}")

    def value(self, symbol: str, t: int, key) -> float:
        self._need()
        return float(self.x[self.ll.col(symbol, t, key)])

    def W(self, t: int, n: int) -> float:
        return 1.0 if n == 0 else self.value("Wii", t, n)

    def dual(self, family: str, key: tuple) -> float:
        """Dual of a row, e.g. ``dual("pi_p", (t, n))``.

        For bounds with ``lo == hi`` the row is an equality; ``*_max``/``*_min``
        then return the positive and negative parts of its free multiplier.
        """
        self._need()
        idx = self.ll.row_index.get((family, key))
        if idx is not None:
            return float(self.y[idx])
        for suffix, sign in (("_max", 1.0), ("_min", -1.0)):
            if family.endswith(suffix):
                merged = self.ll.row_index.get((family[: -len(suffix)], key))
                if merged is not None:
                    return max(0.0, sign * float(self.y[merged]))
        return 0.0

    def price(self, t: int, n: int) -> float:
        """Nodal active price; node 0 trades at its import price."""
        if n == 0:
            return self.case.prices_by_time[t].c_p0
        return self.dual("pi_p", (t, n))

    @cached_property
    def primal(self) -> dict[str, dict]:
        self._need()
        out: dict[str, dict] = {}
        for (sym, t, key), v in zip(self.ll.names, self.x):
            out.setdefault(sym, {})[(t, key)] = float(v)
        return out

    @cached_property
    def duals(self) -> dict[str, dict]:
        self._need()
        out: dict[str, dict] = {}
        for r, v in zip(self.ll.rows, self.y):
            out.setdefault(r.family, {})[r.key] = float(v)
        for k, cn in enumerate(self.ll.cones):
            out.setdefault("gamma", {})[cn.key] = float(self.gamma[k])
            for j, nm in enumerate(("eta_a", "eta_b", "eta_c")):
                out.setdefault(nm, {})[cn.key] = float(self.eta[k, j])
        return out

    def flow(self, t: int, line_key: tuple[int, int], reverse: bool = False) -> float:
        """Active power leaving the sending end (or the receiving end if ``reverse``), kW."""
        self._need()
        fam = "mu_min" if reverse else "mu_max"
        idx = self.ll.row_index[(fam, (t, line_key))]
        lin, const = self.problem.exprs[idx]
        cap = self._flow_cap(line_key, reverse)
        return float(sum(v * self.x[c] for c, v in lin.items()) + const + cap)

    def _flow_cap(self, line_key, reverse: bool) -> float:
        case = self.case
        ln = case.lines[case.line_index[line_key]]
        m = self.problem.assignment[line_key]
        return (ln.f_min if reverse else ln.f_max) + m * ln.f_max

    def flow_limit(self, line_key: tuple[int, int], reverse: bool = False) -> float:
        return self._flow_cap(line_key, reverse)

    def gap(self) -> float:
        return abs(self.objective - self.dual_objective) / (1.0 + abs(self.objective))

    # ---- optimality diagnostics ------------------------------------------

    def stationarity_residual(self) -> float:
        """max |f - A'y + T'gamma - Z'eta| over columns (η in the cone convention used here)."""
        self._need()
        prog = self.problem.program
        z = np.zeros(prog.m)
        z[self.problem.row_pos] = self.y
        for k, start in enumerate(self.problem.cone_pos):
            z[start] = self.gamma[k]
            z[start + 1 : start + 4] = -self.eta[k]
        res = prog.A.T @ z + prog.c
        return float(np.max(np.abs(res), initial=0.0))

    def complementarity(self) -> dict[str, float]:
        """Scaled complementary-slackness products per inequality family."""
        self._need()
        out: dict[str, float] = {}
        for r, (lin, const), yv in zip(self.ll.rows, self.problem.exprs, self.y):
            if r.sense != "le":
                continue
            slack = -(sum(v * self.x[c] for c, v in lin.items()) + const)
            scale = 1.0 + abs(const) + sum(abs(v * self.x[c]) for c, v in lin.items())
            prod = abs(yv * slack) / ((1.0 + abs(yv)) * scale)
            out[r.family] = max(out.get(r.family, 0.0), prod)
        for k, cn in enumerate(self.ll.cones):
            tval = _aff(cn.t, self.x)
            zval = np.array([_aff(zz, self.x) for zz in cn.z])
            prod = abs(self.gamma[k] * tval - float(self.eta[k] @ zval)) / ((1.0 + abs(self.gamma[k])) * (1.0 + abs(tval)))
            out["soc"] = max(out.get("soc", 0.0), prod)
        return out

    def sign_violation(self) -> float:
        self._need()
        worst = 0.0
        for r, yv in zip(self.ll.rows, self.y):
            if r.sense == "le":
                worst = max(worst, -yv)
        cone = self.gamma - np.linalg.norm(self.eta, axis=1) if len(self.gamma) else np.zeros(0)
        return max(worst, float(np.max(-cone, initial=0.0)))


def _aff(expr, x) -> float:
    lin, const = expr
    return float(sum(v * x[c] for c, v in lin.items()) + const)


def solve_market(prob: MarketProblem, settings: SolverSettings = SolverSettings()) -> MarketSolution:
    """Clear the market; duals are only reported for an Optimal status."""
    res = solve_relaxation(prob.program, settings)
    if res.status != Status.OPTIMAL:
        return MarketSolution(prob, res.status, raw=res)
    y = res.z[prob.row_pos]
    gamma = np.array([res.z[s] for s in prob.cone_pos])
    eta = np.array([-res.z[s + 1 : s + 4] for s in prob.cone_pos]).reshape(-1, 3)
    return MarketSolution(
        prob, Status.OPTIMAL, res.x, y, gamma, eta, objective=-res.objective, dual_objective=-res.dual_objective, raw=res
    )


def clear(case: NetworkCase, u: Mapping | None = None, settings: SolverSettings = SolverSettings()) -> MarketSolution:
    return solve_market(build_lower_level(case, u), settings)


# ---- exactness and voltages --------------------------------------------------


@dataclass
class ExactnessReport:
    residuals: dict[tuple, float]
    tol: float

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


class ExactnessViolated(ValueError):
    pass


class ConsistencyViolation(ValueError):
    pass


def cone_residual(Wii: float, Wjj: float, Wp: float, Wq: float) -> float:
    return 0.5 * (Wii + Wjj) - math.sqrt(Wp * Wp + Wq * Wq + (0.5 * (Wii - Wjj)) ** 2)


def check_exactness(sol: MarketSolution, tol: float = 1e-6) -> ExactnessReport:
    """Tightness of each line's cone: zero residual means a rank-one W."""
    sol._need()
    res = {}
    for t in sol.case.periods:
        for ln in sol.case.lines:
            res[(t, ln.key)] = cone_residual(
                sol.W(t, ln.from_node),
                sol.W(t, ln.to_node),
                sol.value("Wijp", t, ln.key),
                sol.value("Wijq", t, ln.key),
            )
    return ExactnessReport(res, tol)


def recover_voltages(sol: MarketSolution, tol: float = 1e-6) -> dict[tuple[int, int], complex]:
    """Complex node voltages ``{(t, n): V}`` with angle 0 at the slack bus."""
    rep = check_exactness(sol, tol)
    if not rep.passed:
        raise ExactnessViolated(f"max cone residual {rep.max_residual:.3e} exceeds {tol:g}")
    case = sol.case
    tree = tree_of(case)
    out: dict[tuple[int, int], complex] = {}
    for t in case.periods:
        ang = {0: 0.0}
        out[(t, 0)] = complex(1.0, 0.0)
        stack = [0]
        while stack:
            i = stack.pop()
            for j in tree.children.get(i, ()):
                key = (i, j)
                # V_i conj(V_j) = Wp + i Wq  =>  theta_i - theta_j = atan2(Wq, Wp)
                ang[j] = ang[i] - math.atan2(sol.value("Wijq", t, key), sol.value("Wijp", t, key))
                out[(t, j)] = math.sqrt(max(sol.W(t, j), 0.0)) * complex(math.cos(ang[j]), math.sin(ang[j]))
                stack.append(j)
    return out


def settlement_quantities(sol: MarketSolution, tol: float = 1e-8) -> dict[str, dict]:
    """Injections and reserves recomputed from allocations, checked against the solver's values."""
    sol._need()
    case = sol.case
    out: dict[str, dict] = {"p": {}, "q": {}, "rup": {}, "rdown": {}}
    worst = 0.0
    for t in case.periods:
        for n in case.downstream_nodes:
            bids, offs = case.bids_at(t, n), case.offers_at(t, n)
            d = {b.id: sol.value("d", t, b.id) for b in bids}
            g = {o.id: sol.value("g", t, o.id) for o in offs}
            p = sum(g.values()) - sum(d.values()) - case.fixed_load(t, n)
            q = sum(sol.value("gq", t, o.id) for o in offs) - sum(sol.value("dq", t, b.id) for b in bids)
            rup = sum(o.p_max - g[o.id] for o in offs) + sum(d.values())
            rdn = sum(g.values()) + sum(b.p_max - d[b.id] for b in bids)
            for sym, v in (("p", p), ("q", q), ("rup", rup), ("rdown", rdn)):
                out[sym][(t, n)] = v
                solved = sol.value(sym, t, n)
                worst = max(worst, abs(v - solved) / (1.0 + abs(v)))
    if worst > tol:
        raise ConsistencyViolation(f"recomputed settlement differs from solver values by {worst:.3e}")
    return out


# ---- CSV export ---------------------------------------------------------------


def write_solution_csv(sol: MarketSolution, path: str, header: list[str] | None = None) -> None:
    sol._need()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for h in header or []:
            fh.write(f"# {h}\n")
        w = csv.writer(fh)
        w.writerow(["symbol", "t", "where", "value"])
        for (sym, t, key), v in zip(sol.ll.names, sol.x):
            w.writerow([sym, t, _where(key), f"{v:.10g}"])
        for r, v in zip(sol.ll.rows, sol.y):
            w.writerow([r.family, r.key[0], _where(r.key[1]), f"{v:.10g}"])


def _where(key) -> str:
    if isinstance(key, tuple):
        return "-".join(str(k) for k in key)
    return str(key)


def write_prices_csv(sol: MarketSolution, path: str, header: list[str] | None = None) -> None:
    sol._need()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for h in header or []:
            fh.write(f"# {h}\n")
        w = csv.writer(fh)
        w.writerow(["t", "node", "pi_p", "pi_q"])
        for t in sol.case.periods:
            for n in sol.case.downstream_nodes:
                w.writerow([t, n, f"{sol.dual('pi_p', (t, n)):.10g}", f"{sol.dual('pi_q', (t, n)):.10g}"])
