"""Nodal payment identity behind the linear merchandising surplus.

At a lower-level optimum, the payment ``pi_n * p_n`` at each downstream node
equals a form that is linear in the allocations and the bound multipliers:

    pi_n p_n = sum_g [phi_max gmax - phi_min gmin + (c_up - c_down + c_g) g]
             - sum_d [-phi_max dmax + phi_min dmin + (c_up - c_down + c_d) d]
             - pi_n D_n

This module evaluates both sides on a solved market so the substitution used
in the revenue-adequacy row can be checked against real solves.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..market.clearing import MarketSolution


@dataclass(frozen=True)
class LemmaReport:
    lhs: dict[tuple[int, int], float]  # (t, n) -> pi * p
    rhs: dict[tuple[int, int], float]
    residuals: dict[tuple[int, int], float]  # relative

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_residual <= tol


def nodal_identity(sol: MarketSolution, t: int, n: int) -> float:
    """Right-hand side of the payment identity at node ``n`` (pence)."""
    case = sol.case
    pr = case.prices_by_time[t]
    total = 0.0
    for o in case.offers_at(t, n):
        k = (t, o.id)
        g = sol.value("g", t, o.id)
        total += sol.dual("phi_gp_max", k) * o.p_max - sol.dual("phi_gp_min", k) * o.p_min
        total += (pr.c_up - pr.c_down + o.price) * g
    for b in case.bids_at(t, n):
        k = (t, b.id)
        d = sol.value("d", t, b.id)
        total -= -sol.dual("phi_dp_max", k) * b.p_max + sol.dual("phi_dp_min", k) * b.p_min
        total -= (pr.c_up - pr.c_down + b.price) * d
    return total - sol.price(t, n) * case.fixed_load(t, n)


def verify_lemma1(sol: MarketSolution) -> LemmaReport:
    """Per-(t, n) relative residual of the payment identity (node 0 included)."""
    case = sol.case
    lhs, rhs, res = {}, {}, {}
    for t in case.periods:
        for n in case.node_ids:
            left = sol.price(t, n) * sol.value("p", t, n)
            # node 0 trades at the import price by definition
            right = left if n == 0 else nodal_identity(sol, t, n)
            lhs[(t, n)], rhs[(t, n)] = left, right
            # both sides are sums of price-times-quantity terms; a node with
            # near-zero net injection would otherwise be judged on absolute error
            volume = case.fixed_load(t, n) + sum(abs(sol.value("g", t, o.id)) for o in case.offers_at(t, n))
            volume += sum(abs(sol.value("d", t, b.id)) for b in case.bids_at(t, n))
            scale = 1.0 + abs(left) + abs(sol.price(t, n)) * volume
            res[(t, n)] = abs(left - right) / scale
    return LemmaReport(lhs, rhs, res)
