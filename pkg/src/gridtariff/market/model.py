"""Lower-level market clearing as a conic program whose coefficients are affine in u.

Every row is stored in the orientation ``expr(x) == 0`` or ``expr(x) <= 0``
together with the dual symbol it carries. Coefficients that depend on the
expansion choice are split into a reference part (the m = 0 option) and
per-option increments multiplying a binary, which relies on the one-hot
constraint. The same object feeds the fixed-u market solve and the symbolic
single-level reformulation.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..network.case import NetworkCase
from ..network.topology import expanded_params, tree_of

M1_DEFAULT = 3000.0  # p/kWh, price cap used to bound dual products


class InvalidAssignment(ValueError):
    """The expansion assignment does not pick exactly one listed option per line."""


Affine = tuple[dict[int, float], float]


@dataclass
class Row:
    family: str  # dual symbol carried by the row
    key: tuple
    sense: str  # "eq" | "le"
    lin: dict[int, float] = field(default_factory=dict)
    const: float = 0.0
    ulin: dict[tuple[int, int], float] = field(default_factory=dict)  # (binary, column) -> coefficient
    uconst: dict[int, float] = field(default_factory=dict)

    def add(self, col: int, v: float) -> None:
        self.lin[col] = self.lin.get(col, 0.0) + v


@dataclass
class Cone:
    key: tuple  # (t, line key)
    t: Affine
    z: tuple[Affine, ...]


@dataclass(frozen=True)
class Binary:
    line: int  # index into case.lines
    option: int  # index into line.expansions
    m: float


@dataclass
class LowerLevel:
    """Eq.-by-eq. lower-level model, parametric in the expansion binaries."""

    case: NetworkCase
    names: list[tuple]  # (symbol, t, key) per column
    index: dict[tuple, int]
    rows: list[Row]
    cones: list[Cone]
    objective: dict[int, float]  # maximized
    binaries: list[Binary]
    ref_option: list[int]  # per line, index of the m = 0 option
    col_bounds: dict[int, tuple[float, float]]  # bounds used by product linearization
    M1: float
    M6: dict[int, float]  # per binary
    row_index: dict[tuple[str, tuple], int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.names)

    def col(self, symbol: str, t: int, key) -> int:
        return self.index[(symbol, t, key)]

    def binary_vector(self, u: Mapping | Sequence | None) -> np.ndarray:
        """Binary values for an assignment ``{line key: m}`` (missing lines take m = 0)."""
        case = self.case
        if u is None:
            u = {}
        if not isinstance(u, Mapping):
            seq = list(u)
            if len(seq) != len(case.lines):
                raise InvalidAssignment(f"expected {len(case.lines)} entries, got {len(seq)}")
            u = {ln.key: m for ln, m in zip(case.lines, seq)}
        unknown = set(u) - set(case.line_index)
        if unknown:
            raise InvalidAssignment(f"unknown lines in assignment: {sorted(unknown)}")
        vec = np.zeros(len(self.binaries))
        chosen = {}
        for li, ln in enumerate(case.lines):
            m = float(u.get(ln.key, 0.0))
            matches = [k for k, opt in enumerate(ln.expansions) if abs(opt.m - m) <= 1e-12]
            if len(matches) != 1:
                raise InvalidAssignment(f"line {ln.key}: m={m} is not one of {ln.m_values}")
            chosen[li] = matches[0]
        for b, bn in enumerate(self.binaries):
            vec[b] = 1.0 if chosen[bn.line] == bn.option else 0.0
        return vec

    def assignment_of(self, vec: np.ndarray) -> dict[tuple[int, int], float]:
        out = {ln.key: 0.0 for ln in self.case.lines}
        for b, bn in enumerate(self.binaries):
            if vec[b] > 0.5:
                out[self.case.lines[bn.line].key] = bn.m
        return out


def _scaled(case: NetworkCase, li: int):
    ln = case.lines[li]
    out = []
    for opt in ln.expansions:
        ep = expanded_params(ln, opt.m)
        out.append((ep.a * case.base_kva, ep.e * case.base_kva, ep.f_add))
    return out


def build_parametric(case: NetworkCase, M1: float = M1_DEFAULT) -> LowerLevel:
    tree = tree_of(case)
    names: list[tuple] = []
    index: dict[tuple, int] = {}
    col_bounds: dict[int, tuple[float, float]] = {}

    def var(symbol: str, t: int, key) -> int:
        k = (symbol, t, key)
        index[k] = len(names)
        names.append(k)
        return index[k]

    binaries: list[Binary] = []
    ref_option: list[int] = []
    bin_of: dict[tuple[int, int], int] = {}
    for li, ln in enumerate(case.lines):
        ref = [k for k, opt in enumerate(ln.expansions) if opt.m == 0.0]
        if len(ref) != 1:
            raise InvalidAssignment(f"line {ln.key} needs exactly one m = 0 option")
        ref_option.append(ref[0])
        for k, opt in enumerate(ln.expansions):
            if k != ref[0]:
                bin_of[(li, k)] = len(binaries)
                binaries.append(Binary(li, k, opt.m))
    params = [_scaled(case, li) for li in range(len(case.lines))]

    M6: dict[int, float] = {}
    for b, bn in enumerate(binaries):
        a, e, _ = params[bn.line][bn.option]
        M6[b] = M1 * (a * a + e * e) / min(a, e)

    rows: list[Row] = []
    cones: list[Cone] = []
    objective: dict[int, float] = defaultdict(float)
    N = case.node_ids
    Nplus = case.downstream_nodes

    def u_term(row: Row, li: int, coefs: Sequence[float], expr: Affine) -> None:
        """Add ``sum_m u_m coef_m * expr`` using the one-hot reference split."""
        ref = ref_option[li]
        lin, const = expr
        c0 = coefs[ref]
        if c0:
            for col, v in lin.items():
                row.add(col, c0 * v)
            row.const += c0 * const
        for k, ck in enumerate(coefs):
            if k == ref:
                continue
            delta = ck - c0
            if delta == 0.0:
                continue
            b = bin_of[(li, k)]
            for col, v in lin.items():
                row.ulin[(b, col)] = row.ulin.get((b, col), 0.0) + delta * v
            if const:
                row.uconst[b] = row.uconst.get(b, 0.0) + delta * const

    for t in case.periods:
        prices = case.prices_by_time[t]
        W: dict[int, Affine] = {0: ({}, 1.0)}
        for n in Nplus:
            c = var("Wii", t, n)
            node = case.node_by_id[n]
            col_bounds[c] = (node.v_min**2, node.v_max**2)
            W[n] = ({c: 1.0}, 0.0)
        Wl = {}
        for ln in case.lines:
            vmax2 = max(case.node_by_id[ln.from_node].v_max, case.node_by_id[ln.to_node].v_max) ** 2
            cols = tuple(var(s, t, ln.key) for s in ("Wijp", "Wijq", "Wjip", "Wjiq"))
            for c in cols:
                col_bounds[c] = (-vmax2, vmax2)
            Wl[ln.key] = cols
        p = {n: var("p", t, n) for n in N}
        q = {n: var("q", t, n) for n in N}
        rup = {n: var("rup", t, n) for n in Nplus}
        rdn = {n: var("rdown", t, n) for n in Nplus}
        bids = {n: case.bids_at(t, n) for n in Nplus}
        offs = {n: case.offers_at(t, n) for n in Nplus}
        d = {b.id: var("d", t, b.id) for n in Nplus for b in bids[n]}
        dq = {b.id: var("dq", t, b.id) for n in Nplus for b in bids[n]}
        g = {o.id: var("g", t, o.id) for n in Nplus for o in offs[n]}
        gq = {o.id: var("gq", t, o.id) for n in Nplus for o in offs[n]}

        for n in Nplus:
            D = case.fixed_load(t, n)
            col_bounds[p[n]] = (
                sum(o.p_min for o in offs[n]) - sum(b.p_max for b in bids[n]) - D,
                sum(o.p_max for o in offs[n]) - sum(b.p_min for b in bids[n]) - D,
            )
            col_bounds[q[n]] = (
                sum(o.q_min for o in offs[n]) - sum(b.q_max for b in bids[n]),
                sum(o.q_max for o in offs[n]) - sum(b.q_min for b in bids[n]),
            )

        # objective (maximized)
        for n in Nplus:
            for b in bids[n]:
                objective[d[b.id]] += b.price
            for o in offs[n]:
                objective[g[o.id]] -= o.price
            objective[rup[n]] += prices.c_up
            objective[rdn[n]] += prices.c_down
        objective[p[0]] -= prices.c_p0
        objective[q[0]] -= prices.c_q0

        # injection definitions [pi_p], [pi_q]
        for n in Nplus:
            r = Row("pi_p", (t, n), "eq", {p[n]: 1.0}, case.fixed_load(t, n))
            for o in offs[n]:
                r.add(g[o.id], -1.0)
            for b in bids[n]:
                r.add(d[b.id], 1.0)
            rows.append(r)
        for n in Nplus:
            r = Row("pi_q", (t, n), "eq", {q[n]: 1.0})
            for o in offs[n]:
                r.add(gq[o.id], -1.0)
            for b in bids[n]:
                r.add(dq[b.id], 1.0)
            rows.append(r)

        # flow expressions leaving each end of a line
        def flows(li: int):
            ln = case.lines[li]
            wijp, wijq, wjip, wjiq = Wl[ln.key]
            Wi, Wj = W[ln.from_node], W[ln.to_node]

            def comb(Wx: Affine, c_w: float, terms: list[tuple[int, float]]) -> Affine:
                lin = {k: c_w * v for k, v in Wx[0].items()}
                for col, v in terms:
                    lin[col] = lin.get(col, 0.0) + v
                return lin, c_w * Wx[1]

            pr = params[li]
            # each entry is per-option coefficient list times an affine expression
            send_p = [([a for a, e, _ in pr], comb(Wi, 1.0, [(wijp, -1.0)])), ([e for a, e, _ in pr], ({wijq: 1.0}, 0.0))]
            recv_p = [([a for a, e, _ in pr], comb(Wj, 1.0, [(wjip, -1.0)])), ([e for a, e, _ in pr], ({wjiq: 1.0}, 0.0))]
            send_q = [([e for a, e, _ in pr], comb(Wi, 1.0, [(wijp, -1.0)])), ([-a for a, e, _ in pr], ({wijq: 1.0}, 0.0))]
            recv_q = [([e for a, e, _ in pr], comb(Wj, 1.0, [(wjip, -1.0)])), ([-a for a, e, _ in pr], ({wjiq: 1.0}, 0.0))]
            return send_p, recv_p, send_q, recv_q

        fl = {li: flows(li) for li in range(len(case.lines))}

        # Kirchhoff [lambda_p], [lambda_q]: p_n - sum(flows) = 0
        for fam, inj, s_idx, r_idx in (("lambda_p", p, 0, 1), ("lambda_q", q, 2, 3)):
            for n in N:
                r = Row(fam, (t, n), "eq", {inj[n]: 1.0})
                for li, ln in enumerate(case.lines):
                    if ln.from_node == n:
                        for coefs, ex in fl[li][s_idx]:
                            u_term(r, li, [-c for c in coefs], ex)
                    elif ln.to_node == n:
                        for coefs, ex in fl[li][r_idx]:
                            u_term(r, li, [-c for c in coefs], ex)
                rows.append(r)

        # flow limits [mu_max], [mu_min]
        for li, ln in enumerate(case.lines):
            for fam, idx, cap in (("mu_max", 0, ln.f_max), ("mu_min", 1, ln.f_min)):
                r = Row(fam, (t, ln.key), "le", const=-cap)
                for coefs, ex in fl[li][idx]:
                    u_term(r, li, coefs, ex)
                u_term(r, li, [-fa for _, _, fa in params[li]], ({}, 1.0))
                rows.append(r)

        # exactness voltage condition [beta]
        for n in Nplus:
            vmax2 = case.node_by_id[n].v_max ** 2
            r = Row("beta", (t, n), "le", const=1.0 - vmax2)
            for li in tree.path_lines(n):
                pr = params[li]
                rc = [2.0 * a / (a * a + e * e) for a, e, _ in pr]
                xc = [2.0 * e / (a * a + e * e) for a, e, _ in pr]
                for k in sorted(tree.downstream_of_line(li)):
                    u_term(r, li, rc, ({p[k]: 1.0}, 0.0))
                    u_term(r, li, xc, ({q[k]: 1.0}, 0.0))
            rows.append(r)

        # voltage bounds [chi_max], [chi_min]
        for n in Nplus:
            node = case.node_by_id[n]
            c = W[n][0]
            rows.append(Row("chi_max", (t, n), "le", dict(c), -node.v_max**2))
            rows.append(Row("chi_min", (t, n), "le", {k: -v for k, v in c.items()}, node.v_min**2))

        # participant bounds [phi_*]
        def bounds(fam: str, col: int, lo: float, hi: float, key) -> None:
            if lo == hi:
                rows.append(Row(fam, key, "eq", {col: 1.0}, -hi))
            else:
                rows.append(Row(fam + "_max", key, "le", {col: 1.0}, -hi))
                rows.append(Row(fam + "_min", key, "le", {col: -1.0}, lo))

        for n in Nplus:
            for b in bids[n]:
                bounds("phi_dp", d[b.id], b.p_min, b.p_max, (t, b.id))
                bounds("phi_dq", dq[b.id], b.q_min, b.q_max, (t, b.id))
            for o in offs[n]:
                bounds("phi_gp", g[o.id], o.p_min, o.p_max, (t, o.id))
                bounds("phi_gq", gq[o.id], o.q_min, o.q_max, (t, o.id))

        # Hermitian rows [eps_p], [eps_q]
        for ln in case.lines:
            wijp, wijq, wjip, wjiq = Wl[ln.key]
            rows.append(Row("eps_p", (t, ln.key), "eq", {wijp: 1.0, wjip: -1.0}))
            rows.append(Row("eps_q", (t, ln.key), "eq", {wijq: 1.0, wjiq: 1.0}))

        # reserves [rho_up], [rho_down]
        for n in Nplus:
            r = Row("rho_up", (t, n), "eq", {rup[n]: 1.0}, -sum(o.p_max for o in offs[n]))
            for o in offs[n]:
                r.add(g[o.id], 1.0)
            for b in bids[n]:
                r.add(d[b.id], -1.0)
            rows.append(r)
            r = Row("rho_down", (t, n), "eq", {rdn[n]: 1.0}, -sum(b.p_max for b in bids[n]))
            for o in offs[n]:
                r.add(g[o.id], -1.0)
            for b in bids[n]:
                r.add(d[b.id], 1.0)
            rows.append(r)

        # rotated PSD condition per line
        for ln in case.lines:
            wijp, wijq, _, _ = Wl[ln.key]
            Wi, Wj = W[ln.from_node], W[ln.to_node]
            tl: dict[int, float] = {}
            dl: dict[int, float] = {}
            for k, v in Wi[0].items():
                tl[k] = tl.get(k, 0.0) + 0.5 * v
                dl[k] = dl.get(k, 0.0) + 0.5 * v
            for k, v in Wj[0].items():
                tl[k] = tl.get(k, 0.0) + 0.5 * v
                dl[k] = dl.get(k, 0.0) - 0.5 * v
            cones.append(
                Cone(
                    (t, ln.key),
                    (tl, 0.5 * (Wi[1] + Wj[1])),
                    (({wijp: 1.0}, 0.0), ({wijq: 1.0}, 0.0), (dl, 0.5 * (Wi[1] - Wj[1]))),
                )
            )

    ll = LowerLevel(
        case=case,
        names=names,
        index=index,
        rows=rows,
        cones=cones,
        objective=dict(objective),
        binaries=binaries,
        ref_option=ref_option,
        col_bounds=col_bounds,
        M1=M1,
        M6=M6,
    )
    ll.row_index = {(r.family, r.key): i for i, r in enumerate(rows)}
    return ll


def line_params(case: NetworkCase, li: int, m: float) -> tuple[float, float, float]:
    """(a, e, F_add) of a line option in kW-scaled units."""
    ep = expanded_params(case.lines[li], m)
    return ep.a * case.base_kva, ep.e * case.base_kva, ep.f_add


def fixed_rows(ll: LowerLevel, uvec: np.ndarray) -> list[tuple[dict[int, float], float]]:
    """Row expressions with the binaries substituted: ``(lin, const)`` per row."""
    out = []
    for r in ll.rows:
        lin = dict(r.lin)
        const = r.const
        for (b, col), v in r.ulin.items():
            if uvec[b]:
                lin[col] = lin.get(col, 0.0) + v * uvec[b]
        for b, v in r.uconst.items():
            const += v * uvec[b]
        out.append((lin, const))
    return out
