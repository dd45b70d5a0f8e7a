"""Expansion planning: exact evaluation of an assignment, the enumeration
oracle, the branch-and-bound planner and tariff recalibration."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .conic.backends import SolverSettings, Status
from .conic.bnb import BnBStatus, LeafValue, SolveOptions, branch_and_bound
from .market.clearing import MarketSolution, build_lower_level, solve_market
from .market.model import M1_DEFAULT, LowerLevel, build_parametric
from .network.case import ExpansionOption, Line, NetworkCase
from .network.topology import expanded_params, tree_of
from .reform.single import SingleLevelProblem, assemble
from .tariff import (
    ExpansionPlan,
    InvestmentCost,
    RevenueLedger,
    investment_cost,
    merchandising_surplus,
    objective_terms,
)

Assignment = dict[tuple[int, int], float]


class SearchSpaceTooLarge(ValueError):
    """The product of option-set sizes exceeds the enumeration cap."""


# ---- scenario plumbing ------------------------------------------------------------


def members(case: NetworkCase, scenarios=None) -> list[tuple[NetworkCase, float]]:
    """(case, probability) per lower-level block; the deterministic case is one block."""
    if scenarios is None:
        return [(case, 1.0)]
    return [(sc.case, sc.probability) for sc in scenarios.scenarios]


# ---- feasibility of an assignment ---------------------------------------------------


def chain_ok(case: NetworkCase, u: Mapping) -> bool:
    """Every expanded line has all of its upstream lines expanded."""
    tree = tree_of(case)
    for ln in case.lines:
        if u.get(ln.key, 0.0) == 0.0:
            continue
        for h in tree.path_lines(ln.from_node):
            if u.get(case.lines[h].key, 0.0) == 0.0:
                return False
    return True


def admissible(case: NetworkCase, u: Mapping) -> bool:
    if case.chain_constraint and not chain_ok(case, u):
        return False
    return investment_cost(case, u).total <= case.k_tot + 1e-9


def tie_key(case: NetworkCase, u: Mapping) -> tuple[float, ...]:
    """Lexicographic key used to break exact objective ties (smaller wins)."""
    return tuple(float(u.get(ln.key, 0.0)) for ln in case.lines)


# ---- exact evaluation ------------------------------------------------------------------


@dataclass
class Evaluation:
    assignment: Assignment
    feasible: bool
    welfare: float = math.nan  # expected lower-level objective
    merchandising: float = math.nan  # expected
    base: float = math.nan  # expected charging base
    cost: InvestmentCost = InvestmentCost(0.0, 0.0)
    k_op: float = 0.0
    tau: float = math.nan
    objective: float = -math.inf  # welfare - tau*base - cost
    solutions: list[MarketSolution] = field(default_factory=list, repr=False)
    reason: str = ""

    @property
    def profit(self) -> float:
        return self.merchandising + self.tau * self.base - self.k_op - self.cost.total


class Evaluator:
    """Scores fixed assignments by clearing each block's market and applying the tariff floor."""

    def __init__(self, case: NetworkCase, scenarios=None, settings: SolverSettings = SolverSettings(),
                 M1: float = M1_DEFAULT, lls: Sequence[LowerLevel] | None = None):
        self.case = case
        self.members = members(case, scenarios)
        self.settings = settings
        self.lls = list(lls) if lls is not None else [build_parametric(c, M1) for c, _ in self.members]
        self.cache: dict[tuple, Evaluation] = {}

    def __call__(self, u: Mapping) -> Evaluation:
        u = {ln.key: float(u.get(ln.key, 0.0)) for ln in self.case.lines}
        key = tie_key(self.case, u)
        if key in self.cache:
            return self.cache[key]
        ev = self._evaluate(u)
        self.cache[key] = ev
        return ev

    def _evaluate(self, u: Assignment) -> Evaluation:
        case = self.case
        cost = investment_cost(case, u)
        if not admissible(case, u):
            return Evaluation(u, False, cost=cost, k_op=case.k_op, reason="budget or chain rule")
        sols, welfare, ms, base = [], 0.0, 0.0, 0.0
        for (c, prob), ll in zip(self.members, self.lls):
            sol = solve_market(build_lower_level(c, u, ll), self.settings)
            if sol.status != Status.OPTIMAL:
                return Evaluation(u, False, cost=cost, k_op=case.k_op, reason=f"market {sol.status.value}")
            sols.append(sol)
            welfare += prob * sol.objective
            ms += prob * merchandising_surplus(sol).linear
            base += prob * c.charging_base()
        shortfall = cost.total + case.k_op - ms
        if shortfall > 0.0 and base <= 0.0:
            return Evaluation(u, False, welfare, ms, base, cost, case.k_op, solutions=sols, reason="no charging base")
        tau = max(0.0, shortfall / base) if base > 0 else 0.0
        obj = welfare - tau * base - cost.total
        return Evaluation(u, True, welfare, ms, base, cost, case.k_op, tau, obj, sols)


def evaluate(case: NetworkCase, u: Mapping | None = None, scenarios=None,
             settings: SolverSettings = SolverSettings()) -> Evaluation:
    return Evaluator(case, scenarios, settings)(u or {})


# ---- enumeration oracle ----------------------------------------------------------------


@dataclass
class OracleResult:
    best: Evaluation | None
    table: list[Evaluation]

    @property
    def objective(self) -> float:
        return self.best.objective if self.best else -math.inf


def search_space(case: NetworkCase) -> int:
    return math.prod(len(ln.expansions) for ln in case.lines)


def enumerate_oracle(case: NetworkCase, cap: int = 10**6, scenarios=None,
                     settings: SolverSettings = SolverSettings()) -> OracleResult:
    """Score every one-hot assignment exactly; ties go to the lexicographically smallest."""
    size = search_space(case)
    if size > cap:
        raise SearchSpaceTooLarge(f"{size} assignments exceed the cap of {cap}")
    ev = Evaluator(case, scenarios, settings)
    table, best = [], None
    for combo in itertools.product(*(ln.m_values for ln in case.lines)):
        e = ev({ln.key: m for ln, m in zip(case.lines, combo)})
        table.append(e)
        if e.feasible and (best is None or _better(case, e, best)):
            best = e
    return OracleResult(best, table)


def _better(case: NetworkCase, a: Evaluation, b: Evaluation, rel: float = 1e-9) -> bool:
    if abs(a.objective - b.objective) <= rel * (1.0 + abs(b.objective)):
        return tie_key(case, a.assignment) < tie_key(case, b.assignment)
    return a.objective > b.objective


# ---- plans -------------------------------------------------------------------------------


def plan_from(ev: Evaluation, probs: Sequence[float]) -> ExpansionPlan:
    parts = {"flexible_surplus": 0.0, "node0_trade": 0.0, "reserve_revenue": 0.0}
    for sol, p in zip(ev.solutions, probs):
        for k, v in objective_terms(sol).items():
            parts[k] += p * v
    parts["tariff_total"] = ev.tau * ev.base
    parts["investment_cost"] = ev.cost.total
    led = RevenueLedger(ev.merchandising, ev.tau * ev.base, ev.k_op, ev.cost.fixed, ev.cost.variable)
    return ExpansionPlan(dict(ev.assignment), ev.tau, ev.objective, parts, led, list(ev.solutions), list(probs))


def build_single_level(case: NetworkCase, scenarios=None, M1: float = M1_DEFAULT) -> SingleLevelProblem:
    mem = members(case, scenarios)
    return assemble(case, [build_parametric(c, M1) for c, _ in mem], [p for _, p in mem])


def plan(case: NetworkCase, options: SolveOptions | None = None, scenarios=None,
         M1: float = M1_DEFAULT) -> ExpansionPlan:
    """Optimal expansion and tariff by branch-and-bound on the single-level program.

    Leaves are scored exactly (market clearing per block plus the tariff
    floor); relaxations of the single-level program supply the bounds.
    """
    t0 = time.perf_counter()
    options = options or SolveOptions()
    slp = build_single_level(case, scenarios, M1)
    ev = Evaluator(case, scenarios, options.settings, lls=[b.ll for b in slp.blocks])
    probs = [b.prob for b in slp.blocks]

    def leaf(fixed: Mapping[int, float]) -> LeafValue | None:
        x = np.zeros(slp.program.n)
        for c, v in fixed.items():
            x[c] = v
        e = ev(slp.assignment(x))
        if not e.feasible:
            return None
        return LeafValue(-e.objective, slp.lift(e.assignment, e.solutions, e.tau))

    opts = replace(options, leaf_evaluator=leaf, tie_break=lambda x: tie_key(case, slp.assignment(x)))
    res = branch_and_bound(slp.program, opts)
    if res.x is None:
        out = ExpansionPlan({}, math.nan, -math.inf, {}, RevenueLedger(0, 0, case.k_op, 0, 0),
                            status=res.status.value, bound=-res.bound, nodes=res.nodes)
        out.elapsed = time.perf_counter() - t0
        return out
    best = ev(slp.assignment(res.x))
    out = plan_from(best, probs)
    out.status = res.status.value
    out.bound = -res.bound
    out.gap = res.gap
    out.nodes = res.nodes
    out.log = res.log
    out.elapsed = time.perf_counter() - t0
    return out


# ---- recalibration ------------------------------------------------------------------------


def rebase_line(line: Line, m: float) -> Line:
    """The line after a built expansion ``m``: it becomes the new m = 0 baseline.

    Remaining options keep their physical meaning (total step relative to the
    original rating) and are re-expressed as increments with their incremental
    cost pinned as absolute amounts.
    """
    if m == 0.0:
        return line
    built = expanded_params(line, m)
    opts = [ExpansionOption(0.0)]
    for opt in line.expansions:
        if opt.m <= m:
            continue
        ep = expanded_params(line, opt.m)
        step = (opt.m - m) / (1.0 + m)
        opts.append(ExpansionOption(step, fixed_cost=ep.fixed_cost - built.fixed_cost,
                                    variable_cost=ep.variable_cost - built.variable_cost))
    return replace(line, a0=built.a, e0=built.e, f_max=line.f_max + built.f_add,
                   f_min=line.f_min + built.f_add, expansions=tuple(opts))


def rebase(case: NetworkCase, u: Mapping) -> NetworkCase:
    return replace(case, lines=tuple(rebase_line(ln, float(u.get(ln.key, 0.0))) for ln in case.lines))


@dataclass
class Recalibration:
    shortfall: float
    realized_prior: Evaluation  # prior plan's u and tau evaluated on the realized case
    plan: ExpansionPlan
    case: NetworkCase  # rebased realized case with the raised K_op


def recalibrate(case: NetworkCase, realized: NetworkCase, prior: ExpansionPlan,
                options: SolveOptions | None = None, scenarios=None,
                shortfall: float | None = None) -> Recalibration:
    """Re-plan after the forecast ``case`` proved wrong.

    The prior plan's expansions are built and become the baseline; the
    revenue the prior tariff fails to raise on ``realized`` is added to K_op
    so the new tariff recovers it. Without a shortfall the prior plan stands.
    A measured ``shortfall`` replaces the computed one.
    """
    ev = Evaluator(realized, scenarios)(prior.assignment)
    if not ev.feasible:
        raise ValueError(f"prior plan is infeasible on the realized case ({ev.reason})")
    if shortfall is None:
        collected = ev.merchandising + prior.tau * ev.base
        shortfall = max(0.0, ev.cost.total + realized.k_op - collected)
    if shortfall <= 1e-9 * (1.0 + ev.cost.total):
        return Recalibration(0.0, ev, prior, realized)
    new_case = replace(rebase(realized, prior.assignment), k_op=realized.k_op + shortfall)
    new_plan = plan(new_case, options, scenarios)
    return Recalibration(shortfall, ev, new_plan, new_case)
