"""Economic post-processing: area prices, merchandising surplus, tariff floor,
surplus tables and the operator's revenue ledger.

All amounts are in pence unless a name says otherwise; reports convert to
pounds at 100 p/£.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .market.clearing import MarketSolution
from .network.case import NetworkCase
from .network.topology import expanded_params
from .reform.single import merchandising_linear

PENCE_PER_POUND = 100.0


class ZeroFixedLoad(ValueError):
    """An area has no fixed demand to weight its price by."""


class UnrecoverableCosts(ValueError):
    """Costs exceed revenues and there is no charging base to levy a tariff on."""


# ---- fixed area price ----------------------------------------------------------


def fixed_area_price(
    prices: Mapping | Sequence[float],
    loads: Mapping | Sequence[float],
    area: Iterable | None = None,
) -> float:
    """Fixed-demand-weighted average of nodal prices.

    ``prices`` and ``loads`` share keys (e.g. ``(t, n)``) or positions;
    ``area`` restricts the keys (default: all).
    """
    if not isinstance(prices, Mapping):
        prices = dict(enumerate(prices))
        loads = dict(enumerate(loads))
    keys = list(prices) if area is None else [k for k in area if k in prices]
    total_load = sum(float(loads.get(k, 0.0)) for k in keys)
    if total_load <= 0.0:
        raise ZeroFixedLoad("the area carries no fixed demand")
    return sum(float(prices[k]) * float(loads.get(k, 0.0)) for k in keys) / total_load


@dataclass(frozen=True)
class PriceReport:
    active: dict[tuple[int, int], float]  # (t, n) -> pi_p
    reactive: dict[tuple[int, int], float]
    area_price: dict[str, float]  # area -> pi_D
    subsidy: dict[tuple[int, int], float]  # (t, n) -> pi_D - pi_p of the node's area
    area_of: dict[int, str]

    def balance(self, case: NetworkCase, area: str) -> float:
        """sum over the area of (pi_D - pi_p) D; zero by construction."""
        return sum(
            self.subsidy[(t, n)] * case.fixed_load(t, n)
            for (t, n) in self.subsidy
            if self.area_of.get(n) == area
        )


def price_report(sol: MarketSolution) -> PriceReport:
    case = sol.case
    active, reactive, subsidy, area_of, area_price = {}, {}, {}, {}, {}
    for t in case.periods:
        for n in case.downstream_nodes:
            active[(t, n)] = sol.price(t, n)
            reactive[(t, n)] = sol.dual("pi_q", (t, n))
    for area in case.area_list:
        keys = [(t, n) for t in case.periods for n in area.nodes]
        loads = {k: case.fixed_load(*k) for k in keys}
        try:
            area_price[area.name] = fixed_area_price(active, loads, keys)
        except ZeroFixedLoad:
            continue
        for n in area.nodes:
            area_of[n] = area.name
        for k in keys:
            subsidy[k] = area_price[area.name] - active[k]
    return PriceReport(active, reactive, area_price, subsidy, area_of)


# ---- merchandising surplus -------------------------------------------------------


class MerchandisingSurplus(NamedTuple):
    direct: float  # -sum pi p - sum c_q0 q0
    linear: float  # nodal payment identity form

    @property
    def discrepancy(self) -> float:
        return abs(self.direct - self.linear) / (1.0 + abs(self.direct))


def merchandising_surplus(sol: MarketSolution) -> MerchandisingSurplus:
    """Consumer payments minus generator receipts, evaluated two ways."""
    case = sol.case
    direct = 0.0
    for t in case.periods:
        for n in case.node_ids:
            direct -= sol.price(t, n) * sol.value("p", t, n)
        direct -= case.prices_by_time[t].c_q0 * sol.value("q", t, 0)
    return MerchandisingSurplus(direct, _linear_value(sol))


def _linear_value(sol: MarketSolution) -> float:
    ll = sol.ll
    n = ll.n
    # primal columns first, then one slot per row dual
    terms, const = merchandising_linear(ll, np.arange(n), n + np.arange(len(ll.rows)))
    vec = np.concatenate([sol.x, sol.y])
    return const + sum(v * vec[c] for c, v in terms.items())


# ---- costs and the tariff floor ---------------------------------------------------


@dataclass(frozen=True)
class InvestmentCost:
    fixed: float
    variable: float

    @property
    def total(self) -> float:
        return self.fixed + self.variable


def investment_cost(case: NetworkCase, u: Mapping[tuple[int, int], float] | None) -> InvestmentCost:
    u = u or {}
    fixed = variable = 0.0
    for ln in case.lines:
        ep = expanded_params(ln, float(u.get(ln.key, 0.0)))
        fixed += ep.fixed_cost
        variable += ep.variable_cost
    return InvestmentCost(fixed, variable)


def floor_tariff(shortfall: float, base: float) -> float:
    """Smallest non-negative tau with tau * base >= shortfall."""
    if shortfall <= 0.0:
        return 0.0
    if base <= 0.0:
        raise UnrecoverableCosts(f"shortfall of {shortfall:.6g} p with an empty charging base")
    return shortfall / base


def tariff_floor(case: NetworkCase, sol: MarketSolution, u: Mapping | None = None) -> float:
    """tau* = max(0, (investment + K_op - merchandising) / charging base)."""
    if u is None:
        u = sol.problem.assignment
    ms = merchandising_surplus(sol).direct
    cost = investment_cost(case, u).total
    return floor_tariff(cost + case.k_op - ms, case.charging_base())


# ---- surplus table ----------------------------------------------------------------


@dataclass(frozen=True)
class Allocation:
    """Prices and cleared quantities of one period, keyed by node / participant id."""

    prices: Mapping[int, float]
    d: Mapping[str, float]
    g: Mapping[str, float]
    t: int = 0

    @classmethod
    def from_solution(cls, sol: MarketSolution, t: int = 0) -> "Allocation":
        case = sol.case
        return cls(
            {n: sol.price(t, n) for n in case.downstream_nodes},
            {b.id: sol.value("d", t, b.id) for b in case.bids if b.time == t},
            {o.id: sol.value("g", t, o.id) for o in case.offers if o.time == t},
            t,
        )


@dataclass(frozen=True)
class SurplusReport:
    consumer_surplus: float  # pounds
    consumer_reserve: float
    producer_surplus: float
    producer_reserve: float

    @property
    def total(self) -> float:
        return self.consumer_surplus + self.consumer_reserve + self.producer_surplus + self.producer_reserve

    def as_row(self) -> dict[str, float]:
        return {
            "surplus_flexible_consumers": self.consumer_surplus,
            "revenues_reserve_consumers": self.consumer_reserve,
            "surplus_flexible_generators": self.producer_surplus,
            "revenues_reserve_generators": self.producer_reserve,
            "total": self.total,
        }


def welfare_report(case: NetworkCase, source: MarketSolution | Allocation | Sequence[Allocation]) -> SurplusReport:
    """Trading surplus and reserve revenue of flexible consumers and generators, in pounds.

    Consumers earn upward reserve on what they consume and downward reserve on
    their unused headroom; generators the reverse.
    """
    if isinstance(source, MarketSolution):
        allocs = [Allocation.from_solution(source, t) for t in case.periods]
    elif isinstance(source, Allocation):
        allocs = [source]
    else:
        allocs = list(source)
    cs = cr = ps = pr_ = 0.0
    for al in allocs:
        tp = case.prices_by_time[al.t]
        for b in case.bids:
            if b.time != al.t:
                continue
            d = float(al.d.get(b.id, 0.0))
            cs += (b.price - al.prices[b.node]) * d
            cr += tp.c_up * d + tp.c_down * (b.p_max - d)
        for o in case.offers:
            if o.time != al.t:
                continue
            g = float(al.g.get(o.id, 0.0))
            ps += (al.prices[o.node] - o.price) * g
            pr_ += tp.c_up * (o.p_max - g) + tp.c_down * g
    k = PENCE_PER_POUND
    return SurplusReport(cs / k, cr / k, ps / k, pr_ / k)


# ---- plan ledger -------------------------------------------------------------------


@dataclass(frozen=True)
class RevenueLedger:
    merchandising: float
    tariff_revenue: float
    k_op: float
    fixed_cost: float
    variable_cost: float

    @property
    def profit(self) -> float:
        return self.merchandising + self.tariff_revenue - self.k_op - self.fixed_cost - self.variable_cost

    def as_row(self) -> dict[str, float]:
        return {
            "merchandising_surplus": self.merchandising,
            "total_tariff": self.tariff_revenue,
            "k_op": self.k_op,
            "fixed_costs": self.fixed_cost,
            "variable_costs": self.variable_cost,
            "profit": self.profit,
        }


def ledger(merchandising: float, costs: InvestmentCost, k_op: float, base: float) -> tuple[float, RevenueLedger]:
    """Minimal tariff and the resulting ledger for given revenues and costs."""
    tau = floor_tariff(costs.total + k_op - merchandising, base)
    return tau, RevenueLedger(merchandising, tau * base, k_op, costs.fixed, costs.variable)


@dataclass
class ExpansionPlan:
    assignment: dict[tuple[int, int], float]
    tau: float  # p/kW per hour
    objective: float  # expected welfare - tariff - investment, pence
    decomposition: dict[str, float]
    ledger: RevenueLedger
    solutions: list[MarketSolution] = field(default_factory=list, repr=False)
    probabilities: list[float] = field(default_factory=list)
    status: str = "Optimal"
    bound: float = float("nan")
    gap: float = 0.0
    nodes: int = 0
    elapsed: float = 0.0
    log: list = field(default_factory=list, repr=False)  # branch-and-bound node records

    @property
    def expanded(self) -> dict[tuple[int, int], float]:
        return {k: m for k, m in self.assignment.items() if m != 0.0}


def objective_terms(sol: MarketSolution) -> dict[str, float]:
    """Split of the lower-level objective (pence)."""
    case = sol.case
    flex = node0 = reserve = 0.0
    for t in case.periods:
        tp = case.prices_by_time[t]
        flex += sum(b.price * sol.value("d", t, b.id) for b in case.bids if b.time == t)
        flex -= sum(o.price * sol.value("g", t, o.id) for o in case.offers if o.time == t)
        node0 -= tp.c_p0 * sol.value("p", t, 0) + tp.c_q0 * sol.value("q", t, 0)
        for n in case.downstream_nodes:
            reserve += tp.c_up * sol.value("rup", t, n) + tp.c_down * sol.value("rdown", t, n)
    return {"flexible_surplus": flex, "node0_trade": node0, "reserve_revenue": reserve}
