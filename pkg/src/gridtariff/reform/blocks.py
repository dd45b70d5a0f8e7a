"""Solver-independent view of the reformulation pieces.

Each piece is a list of :class:`SymRow` over symbolic columns:

    ("x", c)        lower-level primal column c
    ("y", r)        multiplier of lower-level row r
    ("gamma", k)    dual cone head of cone k
    ("eta", k, j)   dual cone tail j of cone k
    ("u", b)        expansion binary b
    ("ux", b, c)    product u_b * x_c (flagged for linearization)
    ("uy", b, r)    product u_b * y_r (flagged for linearization)
    ("aux", i)      auxiliary column replacing product i

The assembler in :mod:`.single` builds the same rows directly into a program;
these are meant for inspection, testing against solved markets and export.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..market.clearing import MarketSolution
from ..market.model import LowerLevel
from .single import BigMTable, UnboundedProduct, dual_bound, merchandising_linear

Sym = tuple


@dataclass(frozen=True)
class SymRow:
    name: str
    sense: str  # "eq" | "le"  (terms . v  {==, <=}  rhs)
    terms: dict[Sym, float]
    rhs: float = 0.0

    def products(self) -> list[Sym]:
        return [s for s in self.terms if s[0] in ("ux", "uy")]


@dataclass(frozen=True)
class SymCone:
    name: str
    head: Sym
    tail: tuple[Sym, ...]


@dataclass(frozen=True)
class AuxVar:
    product: Sym
    lo: float
    hi: float
    rows: tuple[SymRow, ...]


@dataclass(frozen=True)
class AuxVarMap:
    entries: tuple[AuxVar, ...]

    def column_of(self, product: Sym) -> Sym:
        for i, e in enumerate(self.entries):
            if e.product == product:
                return ("aux", i)
        raise KeyError(product)

    def __len__(self) -> int:
        return len(self.entries)


def _label(ll: LowerLevel, s: Sym) -> str:
    if s[0] == "x":
        sym, t, k = ll.names[s[1]]
        return f"{sym}[{t},{k}]"
    if s[0] == "y":
        r = ll.rows[s[1]]
        return f"{r.family}[{r.key}]"
    return repr(s)


# ---- dual block -----------------------------------------------------------------


def build_dual_block(ll: LowerLevel) -> tuple[list[SymRow], list[SymCone]]:
    """One stationarity equality per primal column plus the dual cones."""
    stat: list[dict[Sym, float]] = [dict() for _ in range(ll.n)]

    def add(c: int, s: Sym, v: float) -> None:
        stat[c][s] = stat[c].get(s, 0.0) + v

    for ri, r in enumerate(ll.rows):
        for c, v in r.lin.items():
            add(c, ("y", ri), v)
        for (b, c), v in r.ulin.items():
            add(c, ("uy", b, ri), v)
    for k, cn in enumerate(ll.cones):
        for c, v in cn.t[0].items():
            add(c, ("gamma", k), -v)
        for j, z in enumerate(cn.z):
            for c, v in z[0].items():
                add(c, ("eta", k, j), v)
    rows = [
        SymRow(f"dual_{_label(ll, ('x', c))}", "eq", stat[c], ll.objective.get(c, 0.0))
        for c in range(ll.n)
    ]
    cones = [
        SymCone(f"dual_soc[{cn.key}]", ("gamma", k), tuple(("eta", k, j) for j in range(3)))
        for k, cn in enumerate(ll.cones)
    ]
    return rows, cones


# ---- strong duality -------------------------------------------------------------


def build_strong_duality(ll: LowerLevel) -> SymRow:
    """primal objective - dual objective == 0, with u * multiplier products flagged."""
    terms: dict[Sym, float] = {}

    def add(s: Sym, v: float) -> None:
        if v:
            terms[s] = terms.get(s, 0.0) + v

    for c, v in ll.objective.items():
        add(("x", c), v)
    for ri, r in enumerate(ll.rows):
        add(("y", ri), r.const)
        for b, v in r.uconst.items():
            add(("uy", b, ri), v)
    for k, cn in enumerate(ll.cones):
        add(("gamma", k), -cn.t[1])
        for j, z in enumerate(cn.z):
            add(("eta", k, j), z[1])
    return SymRow("strong_duality", "eq", terms, 0.0)


# ---- linearization -------------------------------------------------------------------


def product_bounds(ll: LowerLevel, product: Sym) -> tuple[float, float]:
    if product[0] == "ux":
        c = product[2]
        if c not in ll.col_bounds:
            raise UnboundedProduct(f"no bound known for {_label(ll, ('x', c))}")
        return ll.col_bounds[c]
    return dual_bound(ll, ll.rows[product[2]].family, product[1])


def linearize_products(ll: LowerLevel, rows: list[SymRow], bigm: BigMTable | None = None
                       ) -> tuple[AuxVarMap, list[SymRow]]:
    """Replace each flagged product by an auxiliary column and append its four rows.

    ``bigm`` defaults to the table derived from ``ll``; product bounds come
    from the same sources (variable bounds, M1 and the per-line M6).
    """
    bigm = bigm or BigMTable.from_lower_level(ll)
    order: list[Sym] = []
    for r in rows:
        for p in r.products():
            if p not in order:
                order.append(p)
    entries = []
    for i, p in enumerate(order):
        lo, hi = product_bounds(ll, p)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise UnboundedProduct(f"{p}: bounds [{lo}, {hi}] are not finite")
        u, x, y = ("u", p[1]), (("x" if p[0] == "ux" else "y"), p[2]), ("aux", i)
        nm = f"{p[0]}[{p[1]},{p[2]}]"
        lin = (
            SymRow(f"mc_lo[{nm}]", "le", {u: lo, y: -1.0}),
            SymRow(f"mc_hi[{nm}]", "le", {y: 1.0, u: -hi}),
            SymRow(f"mc_rlo[{nm}]", "le", {x: -1.0, y: 1.0, u: -lo}, -lo),
            SymRow(f"mc_rhi[{nm}]", "le", {x: 1.0, y: -1.0, u: hi}, hi),
        )
        entries.append(AuxVar(p, lo, hi, lin))
    amap = AuxVarMap(tuple(entries))
    index = {e.product: ("aux", i) for i, e in enumerate(entries)}
    out = []
    for r in rows:
        terms: dict[Sym, float] = {}
        for s, v in r.terms.items():
            s = index.get(s, s)
            terms[s] = terms.get(s, 0.0) + v
        out.append(SymRow(r.name, r.sense, terms, r.rhs))
    for e in entries:
        out.extend(e.rows)
    return amap, out


# ---- merchandising surplus -----------------------------------------------------------------


def substitute_merchandising(ll: LowerLevel) -> tuple[dict[Sym, float], float]:
    """Linear form of consumer payments minus generator receipts."""
    terms, const = merchandising_linear(ll, [("x", c) for c in range(ll.n)],
                                        [("y", r) for r in range(len(ll.rows))])
    return terms, const


# ---- evaluation against a solved market ----------------------------------------------------


def values_from(sol: MarketSolution, amap: AuxVarMap | None = None) -> dict[Sym, float]:
    """Symbol values at a solved market (binaries from its assignment)."""
    ll = sol.ll
    u = sol.problem.uvec
    v: dict[Sym, float] = {}
    v.update({("x", c): float(sol.x[c]) for c in range(ll.n)})
    v.update({("y", r): float(sol.y[r]) for r in range(len(ll.rows))})
    for k in range(len(ll.cones)):
        v[("gamma", k)] = float(sol.gamma[k])
        for j in range(3):
            v[("eta", k, j)] = float(sol.eta[k, j])
    v.update({("u", b): float(u[b]) for b in range(len(u))})
    if amap is not None:
        for i, e in enumerate(amap.entries):
            v[("aux", i)] = v[("u", e.product[1])] * v[(("x" if e.product[0] == "ux" else "y"), e.product[2])]
    return v


def evaluate(terms: Mapping[Sym, float], values: Mapping[Sym, float]) -> float:
    total = 0.0
    for s, c in terms.items():
        if s[0] in ("ux", "uy"):
            val = values[("u", s[1])] * values[(("x" if s[0] == "ux" else "y"), s[2])]
        else:
            val = values[s]
        total += c * val
    return total


def residual(row: SymRow, values: Mapping[Sym, float]) -> float:
    """Violation of ``row`` (0 when satisfied)."""
    lhs = evaluate(row.terms, values) - row.rhs
    return abs(lhs) if row.sense == "eq" else max(0.0, lhs)
