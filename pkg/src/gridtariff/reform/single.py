"""Single-level mixed-integer conic reformulation of the planning problem.

The lower level is replaced by its primal rows, its dual rows (stationarity
and dual cones) and a strong-duality equality. Products of expansion binaries
with continuous variables are linearized with big-M rows, and the revenue
adequacy row uses the linear merchandising-surplus identity, so the
continuous relaxation has only linear rows and second-order cones.

Several lower-level blocks (scenarios) may share the binaries and the tariff;
the deterministic model is the single-block case with probability one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..conic.program import ConicProgram, ProgramBuilder
from ..market.clearing import MarketSolution
from ..market.model import M1_DEFAULT, LowerLevel, build_parametric
from ..network.case import NetworkCase
from ..network.topology import expanded_params, tree_of


class UnboundedProduct(ValueError):
    """A binary multiplies a variable for which no finite big-M is known."""


# ---- big-M table -------------------------------------------------------------


@dataclass(frozen=True)
class BigMTable:
    M1: float
    M2: dict[tuple[int, int], float]  # (t, n) -> lower bound on p
    M3: dict[tuple[int, int], float]
    M4: dict[tuple[int, int], float]
    M5: dict[tuple[int, int], float]
    M6: dict[tuple[tuple[int, int], float], float]  # (line key, m) -> bound on beta products

    @classmethod
    def from_lower_level(cls, ll: LowerLevel) -> "BigMTable":
        M2, M3, M4, M5 = {}, {}, {}, {}
        for (sym, t, key), col in ll.index.items():
            if sym == "p" and key != 0:
                M2[(t, key)], M3[(t, key)] = ll.col_bounds[col]
            elif sym == "q" and key != 0:
                M4[(t, key)], M5[(t, key)] = ll.col_bounds[col]
        case = ll.case
        M6 = {}
        for li, ln in enumerate(case.lines):
            for opt in ln.expansions:
                ep = expanded_params(ln, opt.m)
                a, e = ep.a * case.base_kva, ep.e * case.base_kva
                M6[(ln.key, opt.m)] = ll.M1 * (a * a + e * e) / min(a, e)
        return cls(ll.M1, M2, M3, M4, M5, M6)


DUAL_PRODUCT_FAMILIES = ("lambda_p", "lambda_q", "mu_max", "mu_min", "beta")


def dual_bound(ll: LowerLevel, family: str, b: int) -> tuple[float, float]:
    if family in ("lambda_p", "lambda_q"):
        return -ll.M1, ll.M1
    if family in ("mu_max", "mu_min"):
        return 0.0, ll.M1
    if family == "beta":
        return 0.0, ll.M6[b]
    raise UnboundedProduct(f"no big-M for products of a binary with the {family} multiplier")


# ---- assembled problem -------------------------------------------------------


@dataclass
class Block:
    """Column map of one lower-level block inside the single-level program."""

    ll: LowerLevel
    prob: float
    x: np.ndarray  # LL column -> program column
    y: np.ndarray  # LL row -> program column of its dual
    gamma: np.ndarray
    eta: np.ndarray  # (n_cones, 3)
    base: float  # charging base of the block, kW·h
    aux_x: dict[tuple[int, int], int] = field(default_factory=dict)  # (binary, LL col) -> aux col
    aux_y: dict[tuple[int, int], int] = field(default_factory=dict)  # (binary, LL row) -> aux col
    ms_terms: dict[int, float] = field(default_factory=dict)  # linear merchandising surplus (program cols)
    ms_const: float = 0.0


@dataclass
class SingleLevelProblem:
    case: NetworkCase
    program: ConicProgram
    blocks: list[Block]
    u: dict[tuple[int, int], int]  # (line index, option index) -> column
    tau: int
    cost: dict[tuple[int, int], float]  # (line index, option index) -> investment cost, p
    bigm: BigMTable
    row_groups: dict[str, list[int]]

    # ---- helpers -------------------------------------------------------------

    @property
    def binary_columns(self) -> list[int]:
        return sorted(self.u.values())

    def assignment(self, x: np.ndarray) -> dict[tuple[int, int], float]:
        out = {}
        for (li, k), col in self.u.items():
            if x[col] > 0.5:
                out[self.case.lines[li].key] = self.case.lines[li].expansions[k].m
        return out

    def fixing(self, assignment: Mapping[tuple[int, int], float]) -> dict[int, float]:
        """Column values fixing every binary to a one-hot assignment."""
        fixed = {}
        for (li, k), col in self.u.items():
            ln = self.case.lines[li]
            m = float(assignment.get(ln.key, 0.0))
            fixed[col] = 1.0 if abs(ln.expansions[k].m - m) <= 1e-12 else 0.0
        return fixed

    def investment_cost(self, assignment: Mapping[tuple[int, int], float]) -> float:
        total = 0.0
        for (li, k), c in self.cost.items():
            ln = self.case.lines[li]
            if abs(ln.expansions[k].m - float(assignment.get(ln.key, 0.0))) <= 1e-12:
                total += c
        return total

    def expected_base(self) -> float:
        return sum(b.prob * b.base for b in self.blocks)

    def merchandising(self, x: np.ndarray) -> float:
        """Expected merchandising surplus (linear identity) at a program point."""
        return sum(b.prob * (sum(v * x[c] for c, v in b.ms_terms.items()) + b.ms_const) for b in self.blocks)

    def welfare(self, x: np.ndarray) -> float:
        """Expected lower-level objective at a program point."""
        return sum(b.prob * sum(v * x[b.x[c]] for c, v in b.ll.objective.items()) for b in self.blocks)

    def row_terms(self, name: str) -> tuple[dict[str, float], float, str]:
        """Symbolic view of a named row: ({column name: coef}, rhs, kind)."""
        prog = self.program
        r = prog.row_names.index(name)
        row = prog.A.getrow(r)
        terms = {prog.var_names[c]: float(v) for c, v in zip(row.indices, row.data)}
        kind = "eq" if r < prog.n_eq else ("le" if r < prog.n_eq + prog.n_ineq else "soc")
        return terms, float(prog.b[r]), kind

    def lift(self, assignment: Mapping, solutions: Sequence[MarketSolution], tau: float) -> np.ndarray:
        """Program point built from fixed-u market solutions (one per block)."""
        x = np.zeros(self.program.n)
        fixed = self.fixing(assignment)
        for col, v in fixed.items():
            x[col] = v
        x[self.tau] = tau
        for blk, sol in zip(self.blocks, solutions):
            x[blk.x] = sol.x
            x[blk.y] = sol.y
            x[blk.gamma] = sol.gamma
            x[blk.eta.ravel()] = sol.eta.ravel()
            uvec = blk.ll.binary_vector(assignment)
            for (b, c), col in blk.aux_x.items():
                x[col] = uvec[b] * sol.x[c]
            for (b, r), col in blk.aux_y.items():
                x[col] = uvec[b] * sol.y[r]
        return x

    def audit_big_m(self, x: np.ndarray, rel: float = 1e-6) -> list[str]:
        """Products whose factor sits at (or beyond) its big-M bound."""
        hits = []
        for pr in self.program.products:
            v = x[pr.x]
            for bound in (pr.lo, pr.hi):
                if bound != 0.0 and abs(v - bound) <= rel * abs(bound):
                    hits.append(f"{self.program.var_names[pr.x]} at {bound:g}")
            if v < pr.lo - rel * max(1.0, abs(pr.lo)) or v > pr.hi + rel * max(1.0, abs(pr.hi)):
                hits.append(f"{self.program.var_names[pr.x]}={v:g} outside [{pr.lo:g}, {pr.hi:g}]")
        return hits


class _Assembler:
    def __init__(self, case: NetworkCase, lls: Sequence[LowerLevel], probs: Sequence[float]):
        self.case = case
        self.lls = list(lls)
        self.probs = list(probs)
        self.pb = ProgramBuilder()
        self.groups: dict[str, list[tuple[str, int]]] = {}
        self.u: dict[tuple[int, int], int] = {}
        self.cost: dict[tuple[int, int], float] = {}
        self.blocks: list[Block] = []

    def tag(self, group: str, ref: tuple[str, int]) -> None:
        self.groups.setdefault(group, []).append(ref)

    # -- binaries and tariff ----------------------------------------------------

    def upper_columns(self) -> None:
        pb = self.pb
        for li, ln in enumerate(self.case.lines):
            cols = []
            for k, opt in enumerate(ln.expansions):
                col = pb.var(f"u[{ln.key[0]}-{ln.key[1]},m={opt.m:g}]", 0.0, 1.0, integer=True)
                self.u[(li, k)] = col
                cols.append(col)
                self.cost[(li, k)] = expanded_params(ln, opt.m).cost
            pb.group(cols)
        self.tau = pb.var("tau", 0.0, np.inf)

    def u_col(self, ll: LowerLevel, b: int) -> int:
        bn = ll.binaries[b]
        return self.u[(bn.line, bn.option)]

    # -- per-block pieces ---------------------------------------------------

    def block(self, w: int) -> Block:
        ll, pb = self.lls[w], self.pb
        pre = f"s{w}:" if len(self.lls) > 1 else ""
        xcols = np.array([pb.var(f"{pre}{s}[{t},{_k(k)}]") for s, t, k in ll.names], dtype=int)
        ycols = np.array(
            [pb.var(f"{pre}{r.family}[{r.key[0]},{_k(r.key[1])}]", 0.0 if r.sense == "le" else -np.inf) for r in ll.rows],
            dtype=int,
        )
        gcols = np.array([pb.var(f"{pre}gamma[{c.key[0]},{_k(c.key[1])}]") for c in ll.cones], dtype=int)
        ecols = np.array(
            [[pb.var(f"{pre}eta_{s}[{c.key[0]},{_k(c.key[1])}]") for s in "abc"] for c in ll.cones], dtype=int
        ).reshape(-1, 3)
        blk = Block(ll, self.probs[w], xcols, ycols, gcols, ecols, _charging_base(ll.case))
        self.primal_rows(blk, pre)
        self.dual_rows(blk, pre)
        self.strong_duality(blk, pre)
        self.merchandising(blk)
        return blk

    def aux(self, blk: Block, b: int, col: int, lo: float, hi: float, name: str, kind: str) -> int:
        store = blk.aux_x if kind == "x" else blk.aux_y
        key = (b, col)
        if key in store:
            return store[key]
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise UnboundedProduct(f"{name}: bounds [{lo}, {hi}] are not finite")
        pb = self.pb
        ucol = self.u_col(blk.ll, b)
        xcol = blk.x[col] if kind == "x" else blk.y[col]
        y = pb.var(f"y[{name}]")
        store[key] = y
        rows = linearize_product(pb, ucol, xcol, y, lo, hi, name)
        for r in rows:
            self.tag("linearization", r)
        pb.product(ucol, xcol, y, rows, lo, hi)
        return y

    def x_bound(self, ll: LowerLevel, col: int) -> tuple[float, float]:
        if col not in ll.col_bounds:
            s, t, k = ll.names[col]
            raise UnboundedProduct(f"no bound known for {s}[{t},{k}]")
        return ll.col_bounds[col]

    def primal_rows(self, blk: Block, pre: str) -> None:
        ll, pb = blk.ll, self.pb
        for r in ll.rows:
            terms: dict[int, float] = {}
            for c, v in r.lin.items():
                terms[blk.x[c]] = terms.get(blk.x[c], 0.0) + v
            for (b, c), v in r.ulin.items():
                lo, hi = self.x_bound(ll, c)
                s, t, k = ll.names[c]
                bn = ll.binaries[b]
                name = f"{pre}u{bn.line}.{bn.option}*{s}[{t},{_k(k)}]"
                a = self.aux(blk, b, c, lo, hi, name, "x")
                terms[a] = terms.get(a, 0.0) + v
            for b, v in r.uconst.items():
                uc = self.u_col(ll, b)
                terms[uc] = terms.get(uc, 0.0) + v
            name = f"{pre}{r.family}[{r.key[0]},{_k(r.key[1])}]"
            ref = pb.eq(terms, -r.const, name) if r.sense == "eq" else pb.le(terms, -r.const, name)
            self.tag("primal", ref)
        for k, cn in enumerate(ll.cones):
            members = [(_remap(cn.t[0], blk.x), cn.t[1])] + [(_remap(z[0], blk.x), z[1]) for z in cn.z]
            self.tag("primal_cone", pb.soc(members, f"{pre}soc[{cn.key[0]},{_k(cn.key[1])}]"))
        self.transport_rows(blk, pre)

    def transport_rows(self, blk: Block, pre: str) -> None:
        """Rows implied by nonnegative losses; redundant at binary u, they keep
        the relaxation from inventing power through decoupled products.

        Per period: total active and reactive injection >= 0 (series losses
        only, no shunts). Per line (i, j): net withdrawal of the subtree below
        j fits the (expanded) sending-end rating.
        """
        ll, pb, case = blk.ll, self.pb, self.case
        tree = tree_of(case)
        for t in case.periods:
            p = {n: blk.x[ll.col("p", t, n)] for n in case.node_ids}
            q = [blk.x[ll.col("q", t, n)] for n in case.node_ids]
            self.tag("transport", pb.le({c: -1.0 for c in p.values()}, 0.0, f"{pre}losses_p[{t}]"))
            self.tag("transport", pb.le({c: -1.0 for c in q}, 0.0, f"{pre}losses_q[{t}]"))
            for li, ln in enumerate(case.lines):
                terms = {p[k]: -1.0 for k in tree.subtree(ln.to_node)}
                for k, opt in enumerate(ln.expansions):
                    fa = expanded_params(ln, opt.m).f_add
                    if fa:
                        terms[self.u[(li, k)]] = -fa
                ref = pb.le(terms, ln.f_max, f"{pre}transport[{t},{_k(ln.key)}]")
                self.tag("transport", ref)

    def dual_rows(self, blk: Block, pre: str) -> None:
        """Stationarity per primal column plus dual cones (η in the cone's own orientation)."""
        ll, pb = blk.ll, self.pb
        n = ll.n
        stat: list[dict[int, float]] = [dict() for _ in range(n)]
        for ri, r in enumerate(ll.rows):
            ycol = blk.y[ri]
            for c, v in r.lin.items():
                stat[c][ycol] = stat[c].get(ycol, 0.0) + v
            for (b, c), v in r.ulin.items():
                lo, hi = dual_bound(ll, r.family, b)
                bn = ll.binaries[b]
                name = f"{pre}u{bn.line}.{bn.option}*{r.family}[{r.key[0]},{_k(r.key[1])}]"
                a = self.aux(blk, b, ri, lo, hi, name, "y")
                stat[c][a] = stat[c].get(a, 0.0) + v
        for k, cn in enumerate(ll.cones):
            for c, v in cn.t[0].items():
                stat[c][blk.gamma[k]] = stat[c].get(blk.gamma[k], 0.0) - v
            for j, z in enumerate(cn.z):
                for c, v in z[0].items():
                    stat[c][blk.eta[k, j]] = stat[c].get(blk.eta[k, j], 0.0) + v
        for c in range(n):
            s, t, key = ll.names[c]
            ref = pb.eq(stat[c], ll.objective.get(c, 0.0), f"{pre}dual_{s}[{t},{_k(key)}]")
            self.tag("dual", ref)
        for k, cn in enumerate(ll.cones):
            members = [({blk.gamma[k]: 1.0}, 0.0)] + [({blk.eta[k, j]: 1.0}, 0.0) for j in range(3)]
            self.tag("dual_cone", pb.soc(members, f"{pre}dual_soc[{cn.key[0]},{_k(cn.key[1])}]"))

    def strong_duality(self, blk: Block, pre: str) -> None:
        """primal objective - dual objective == 0."""
        ll, pb = blk.ll, self.pb
        terms: dict[int, float] = {}

        def add(col: int, v: float) -> None:
            if v:
                terms[col] = terms.get(col, 0.0) + v

        for c, v in ll.objective.items():
            add(blk.x[c], v)
        # dual objective = -sum y (const + sum_b u_b uconst) + sum_k (gamma t0 - eta·z0)
        for ri, r in enumerate(ll.rows):
            add(blk.y[ri], r.const)
            for b, v in r.uconst.items():
                lo, hi = dual_bound(ll, r.family, b)
                bn = ll.binaries[b]
                name = f"{pre}u{bn.line}.{bn.option}*{r.family}[{r.key[0]},{_k(r.key[1])}]"
                add(self.aux(blk, b, ri, lo, hi, name, "y"), v)
        for k, cn in enumerate(ll.cones):
            add(blk.gamma[k], -cn.t[1])
            for j, z in enumerate(cn.z):
                add(blk.eta[k, j], z[1])
        self.tag("strong_duality", pb.eq(terms, 0.0, f"{pre}strong_duality"))

    def merchandising(self, blk: Block) -> None:
        terms, const = merchandising_linear(blk.ll, blk.x, blk.y)
        blk.ms_terms, blk.ms_const = terms, const

    # -- upper-level rows -------------------------------------------------------

    def upper_rows(self) -> None:
        pb, case = self.pb, self.case
        for li, ln in enumerate(case.lines):
            cols = [self.u[(li, k)] for k in range(len(ln.expansions))]
            self.tag("one_hot", pb.eq({c: 1.0 for c in cols}, 1.0, f"one_hot[{_k(ln.key)}]"))
        cost_terms = {self.u[k]: v for k, v in self.cost.items() if v}
        if np.isfinite(case.k_tot):
            self.tag("budget", pb.le(cost_terms, case.k_tot, "budget"))
        if case.chain_constraint:
            tree = tree_of(case)
            for li, ln in enumerate(case.lines):
                ref_l = _ref(ln)
                for h in tree.path_lines(ln.from_node):
                    ref_h = _ref(case.lines[h])
                    # expanded(line) <= expanded(upstream)  <=>  u_h,0 - u_l,0 <= 0
                    ref = pb.le({self.u[(h, ref_h)]: 1.0, self.u[(li, ref_l)]: -1.0}, 0.0,
                                f"chain[{_k(ln.key)}<={_k(case.lines[h].key)}]")
                    self.tag("chain", ref)
        # revenue adequacy: E[MS] + tau E[base] - cost >= K_op
        terms: dict[int, float] = {}
        const = 0.0
        for blk in self.blocks:
            for c, v in blk.ms_terms.items():
                terms[c] = terms.get(c, 0.0) - blk.prob * v
            const += blk.prob * blk.ms_const
        base = sum(b.prob * b.base for b in self.blocks)
        terms[self.tau] = terms.get(self.tau, 0.0) - base
        for c, v in cost_terms.items():
            terms[c] = terms.get(c, 0.0) + v
        self.tag("revenue_adequacy", pb.le(terms, const - case.k_op, "revenue_adequacy"))
        # objective: maximize E[welfare] - tau E[base] - cost
        obj: dict[int, float] = {}
        for blk in self.blocks:
            for c, v in blk.ll.objective.items():
                obj[blk.x[c]] = obj.get(blk.x[c], 0.0) - blk.prob * v
        obj[self.tau] = base
        for c, v in cost_terms.items():
            obj[c] = obj.get(c, 0.0) + v
        pb.minimize(obj)


def linearize_product(pb: ProgramBuilder, u: int, x: int, y: int, lo: float, hi: float, name: str) -> list[tuple[str, int]]:
    """Rows making ``y = u x`` exact for binary ``u`` and ``lo <= x <= hi``."""
    if lo == hi:
        return [
            pb.eq({y: 1.0, u: -lo}, 0.0, f"mc_a[{name}]"),
            pb.eq({x: 1.0, y: -1.0, u: lo}, lo, f"mc_b[{name}]"),
        ]
    return [
        pb.le({u: lo, y: -1.0}, 0.0, f"mc_lo[{name}]"),  # lo u <= y
        pb.le({y: 1.0, u: -hi}, 0.0, f"mc_hi[{name}]"),  # y <= hi u
        pb.le({x: -1.0, y: 1.0, u: -lo}, -lo, f"mc_rlo[{name}]"),  # lo (1-u) <= x - y
        pb.le({x: 1.0, y: -1.0, u: hi}, hi, f"mc_rhi[{name}]"),  # x - y <= hi (1-u)
    ]


def merchandising_linear(ll: LowerLevel, xcol, ycol) -> tuple[dict[int, float], float]:
    """Merchandising surplus as a linear form in allocations and bound multipliers.

    Uses the optimality identity for ``pi * p`` at every downstream node and
    ``pi_0 = c_p0`` at the substation:
    MS = -sum_t [ sum_n E_n + c_p0 p_0 + c_q0 q_0 ].
    """
    case = ll.case
    terms: dict[int, float] = {}

    def add(col: int, v: float) -> None:
        if v:
            terms[col] = terms.get(col, 0.0) + v

    def phi(fam: str, key, coef_max: float, coef_min: float) -> None:
        # contributes coef_max*phi_max + coef_min*phi_min (merged rows carry phi_max - phi_min)
        idx = ll.row_index.get((fam, key))
        if idx is not None:
            add(ycol[idx], coef_max)  # here coef_max == -coef_min by construction
            return
        add(ycol[ll.row_index[(fam + "_max", key)]], coef_max)
        add(ycol[ll.row_index[(fam + "_min", key)]], coef_min)

    for t in case.periods:
        pr = case.prices_by_time[t]
        for n in case.downstream_nodes:
            # -E_n
            for o in case.offers_at(t, n):
                key = (t, o.id)
                if o.p_min == o.p_max:
                    phi("phi_gp", key, -o.p_max, o.p_max)
                else:
                    phi("phi_gp", key, -o.p_max, o.p_min)
                add(xcol[ll.col("g", t, o.id)], -(pr.c_up - pr.c_down + o.price))
            for b in case.bids_at(t, n):
                key = (t, b.id)
                # E_n has - sum_d(-phi_max dmax + phi_min dmin + ...) so -E_n has the same sign inside
                if b.p_min == b.p_max:
                    phi("phi_dp", key, -b.p_max, b.p_max)
                else:
                    phi("phi_dp", key, -b.p_max, b.p_min)
                add(xcol[ll.col("d", t, b.id)], pr.c_up - pr.c_down + b.price)
            D = case.fixed_load(t, n)
            if D:
                add(ycol[ll.row_index[("pi_p", (t, n))]], D)
        add(xcol[ll.col("p", t, 0)], -pr.c_p0)
        add(xcol[ll.col("q", t, 0)], -pr.c_q0)
    return terms, 0.0


def _charging_base(case: NetworkCase) -> float:
    return case.charging_base()


def _ref(ln) -> int:
    return [k for k, o in enumerate(ln.expansions) if o.m == 0.0][0]


def _remap(lin: dict[int, float], cols: np.ndarray) -> dict[int, float]:
    return {int(cols[c]): v for c, v in lin.items()}


def _k(key) -> str:
    if isinstance(key, tuple):
        return "-".join(str(k) for k in key)
    return str(key)


def assemble(case: NetworkCase, lls: Sequence[LowerLevel], probs: Sequence[float]) -> SingleLevelProblem:
    asm = _Assembler(case, lls, probs)
    asm.upper_columns()
    for w in range(len(lls)):
        asm.blocks.append(asm.block(w))
    asm.upper_rows()
    pb = asm.pb
    prog = pb.build()
    groups = {g: [pb.row_index(r) for r in refs] for g, refs in asm.groups.items()}
    return SingleLevelProblem(
        case=case,
        program=prog,
        blocks=asm.blocks,
        u=asm.u,
        tau=asm.tau,
        cost=asm.cost,
        bigm=BigMTable.from_lower_level(lls[0]),
        row_groups=groups,
    )


def assemble_single_level(case: NetworkCase, M1: float = M1_DEFAULT) -> SingleLevelProblem:
    """Deterministic single-level problem for ``case``."""
    return assemble(case, [build_parametric(case, M1)], [1.0])
