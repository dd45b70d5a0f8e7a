"""Solver-agnostic standard-form conic programs.

Convention (same as Clarabel/SCS): minimize c·x + offset subject to
``A x + s = b`` with ``s`` in a product cone laid out in row order as one
zero block (equalities), one nonnegative block (``a·x <= b``) and a list of
second-order cone blocks. A cone row block ``(t, z)`` means ``||z|| <= t``.
Column bounds ``lb``/``ub`` are kept separately and turned into rows by the
backends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Product:
    """Auxiliary column ``y`` standing for ``u * x`` with binary ``u``.

    ``rows`` are the linearization rows that become redundant once ``u`` is fixed.
    """

    u: int
    x: int
    y: int
    rows: tuple[int, ...]
    lo: float
    hi: float


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    n_eq: int
    n_ineq: int
    soc_dims: tuple[int, ...]
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    offset: float = 0.0
    groups: tuple[tuple[int, ...], ...] = ()
    products: tuple[Product, ...] = ()
    var_names: tuple[str, ...] = ()
    row_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def soc_starts(self) -> list[int]:
        out, pos = [], self.n_eq + self.n_ineq
        for d in self.soc_dims:
            out.append(pos)
            pos += d
        return out

    def check(self) -> None:
        if self.A.shape != (self.m, self.n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.m, self.n)}")
        if self.n_eq + self.n_ineq + sum(self.soc_dims) != self.m:
            raise ValueError("cone dimensions do not cover the rows")
        if any(d < 1 for d in self.soc_dims):
            raise ValueError("empty second-order cone block")
        for arr in (self.lb, self.ub, self.integer):
            if arr.shape[0] != self.n:
                raise ValueError("column metadata length mismatch")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation per cone family at ``x`` (0 when feasible)."""
        s = self.b - self.A @ x
        eq = s[: self.n_eq]
        ineq = s[self.n_eq : self.n_eq + self.n_ineq]
        cone = 0.0
        for start, d in zip(self.soc_starts, self.soc_dims):
            blk = s[start : start + d]
            cone = max(cone, float(np.linalg.norm(blk[1:]) - blk[0]))
        bnd = max(
            float(np.max(self.lb - x, initial=0.0)),
            float(np.max(x - self.ub, initial=0.0)),
        )
        return {
            "eq": float(np.max(np.abs(eq), initial=0.0)),
            "ineq": float(np.max(-ineq, initial=0.0)),
            "soc": max(cone, 0.0),
            "bounds": bnd,
        }


class ProgramBuilder:
    """Incremental construction of a ConicProgram from sparse row dictionaries."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.c: dict[int, float] = {}
        self.offset = 0.0
        self._eq: list[tuple[Mapping[int, float], float, str]] = []
        self._le: list[tuple[Mapping[int, float], float, str]] = []
        self._soc: list[tuple[list[tuple[Mapping[int, float], float]], str]] = []
        self.groups: list[tuple[int, ...]] = []
        self._products: list[tuple[int, int, int, list[tuple[str, int]], float, float]] = []

    # columns ---------------------------------------------------------------

    def var(self, name: str, lb: float = -np.inf, ub: float = np.inf, integer: bool = False) -> int:
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.integer.append(integer)
        return len(self.names) - 1

    @property
    def n(self) -> int:
        return len(self.names)

    # rows ------------------------------------------------------------------

    def eq(self, terms: Mapping[int, float], rhs: float, name: str = "") -> tuple[str, int]:
        """``terms · x == rhs``."""
        self._eq.append((dict(terms), float(rhs), name))
        return ("eq", len(self._eq) - 1)

    def le(self, terms: Mapping[int, float], rhs: float, name: str = "") -> tuple[str, int]:
        """``terms · x <= rhs``."""
        self._le.append((dict(terms), float(rhs), name))
        return ("le", len(self._le) - 1)

    def soc(self, members: Sequence[tuple[Mapping[int, float], float]], name: str = "") -> tuple[str, int]:
        """``||(e1, ..., ek)|| <= e0`` where each ``e = terms · x + const``."""
        self._soc.append(([(dict(t), float(k)) for t, k in members], name))
        return ("soc", len(self._soc) - 1)

    def minimize(self, terms: Mapping[int, float], const: float = 0.0) -> None:
        self.c = dict(terms)
        self.offset = float(const)

    def group(self, cols: Iterable[int]) -> None:
        self.groups.append(tuple(cols))

    def product(self, u: int, x: int, y: int, rows: list[tuple[str, int]], lo: float, hi: float) -> None:
        self._products.append((u, x, y, rows, lo, hi))

    # assembly --------------------------------------------------------------

    def build(self) -> ConicProgram:
        n = self.n
        n_eq, n_le = len(self._eq), len(self._le)
        data: list[float] = []
        ri: list[int] = []
        ci: list[int] = []
        b: list[float] = []
        names: list[str] = []

        def put(row: int, terms: Mapping[int, float], sign: float) -> None:
            for col, v in terms.items():
                if v != 0.0:
                    ri.append(row)
                    ci.append(col)
                    data.append(sign * v)

        row = 0
        for terms, rhs, name in self._eq:
            put(row, terms, 1.0)
            b.append(rhs)
            names.append(name)
            row += 1
        for terms, rhs, name in self._le:
            put(row, terms, 1.0)
            b.append(rhs)
            names.append(name)
            row += 1
        dims = []
        soc_start = []
        for members, name in self._soc:
            soc_start.append(row)
            for k, (terms, const) in enumerate(members):
                # s = b - A x = const + terms·x  =>  A = -terms, b = const
                put(row, terms, -1.0)
                b.append(const)
                names.append(f"{name}[{k}]")
                row += 1
            dims.append(len(members))
        A = sp.csr_matrix((data, (ri, ci)), shape=(row, n))
        A.sum_duplicates()
        c = np.zeros(n)
        for col, v in self.c.items():
            c[col] += v

        def glob(ref: tuple[str, int]) -> int:
            kind, i = ref
            if kind == "eq":
                return i
            if kind == "le":
                return n_eq + i
            return soc_start[i]

        products = tuple(
            Product(u, x, y, tuple(glob(r) for r in rows), lo, hi) for u, x, y, rows, lo, hi in self._products
        )
        prog = ConicProgram(
            c=c,
            A=A,
            b=np.asarray(b, dtype=float),
            n_eq=n_eq,
            n_ineq=n_le,
            soc_dims=tuple(dims),
            lb=np.asarray(self.lb, dtype=float),
            ub=np.asarray(self.ub, dtype=float),
            integer=np.asarray(self.integer, dtype=bool),
            offset=self.offset,
            groups=tuple(self.groups),
            products=products,
            var_names=tuple(self.names),
            row_names=tuple(names),
        )
        prog.check()
        return prog

    def row_index(self, ref: tuple[str, int]) -> int:
        """Global row index of a reference returned by ``eq``/``le``/``soc`` (valid after all rows are added)."""
        kind, i = ref
        if kind == "eq":
            return i
        if kind == "le":
            return len(self._eq) + i
        return len(self._eq) + len(self._le) + sum(len(m) for m, _ in self._soc[:i])


# ---- reduction by fixing columns --------------------------------------------


@dataclass(frozen=True)
class Reduction:
    """Affine lift ``x_full = P @ x_red + q`` produced by :func:`fix_columns`."""

    P: sp.csc_matrix
    q: np.ndarray
    kept_rows: np.ndarray

    def lift(self, x_red: np.ndarray) -> np.ndarray:
        return self.P @ x_red + self.q


class FixingInfeasible(Exception):
    """Constant folding left a row that no point can satisfy."""


def fix_columns(prog: ConicProgram, fixed: Mapping[int, float], tol: float = 1e-9) -> tuple[ConicProgram, Reduction]:
    """Substitute fixed binaries and fold the products they control.

    A product ``y = u x`` with ``u`` fixed at 0 becomes ``y = 0``; with ``u``
    fixed at 1 it becomes an alias of ``x``. Linearization rows of resolved
    products are dropped, as are rows left without any column.
    """
    n = prog.n
    alias = np.arange(n)
    value = np.full(n, np.nan)
    for col, v in fixed.items():
        value[col] = v
    drop_rows: set[int] = set()
    for pr in prog.products:
        uv = fixed.get(pr.u)
        if uv is None:
            continue
        drop_rows.update(pr.rows)
        if uv < 0.5:
            value[pr.y] = 0.0
        else:
            alias[pr.y] = pr.x
    # resolve alias chains (x itself may be fixed)
    for col in range(n):
        tgt = alias[col]
        while alias[tgt] != tgt:
            tgt = alias[tgt]
        alias[col] = tgt
    free_cols = [col for col in range(n) if np.isnan(value[col]) and alias[col] == col]
    pos = {col: k for k, col in enumerate(free_cols)}
    q = np.zeros(n)
    pr_i, pc_i = [], []
    for col in range(n):
        if not np.isnan(value[col]):
            q[col] = value[col]
        else:
            tgt = alias[col]
            if not np.isnan(value[tgt]):
                q[col] = value[tgt]
            else:
                pr_i.append(col)
                pc_i.append(pos[tgt])
    P = sp.csc_matrix((np.ones(len(pr_i)), (pr_i, pc_i)), shape=(n, len(free_cols)))

    A_full = prog.A.tocsr()
    A_red = (A_full @ P).tocsr()
    b_red = prog.b - A_full @ q
    # merged column bounds: an aliased product keeps the tighter of both
    lb = prog.lb[free_cols].copy()
    ub = prog.ub[free_cols].copy()
    for col in range(n):
        tgt = alias[col]
        if tgt != col and np.isnan(value[tgt]) and np.isnan(value[col]):
            k = pos[tgt]
            lb[k] = max(lb[k], prog.lb[col])
            ub[k] = min(ub[k], prog.ub[col])
    for col in range(n):
        if not np.isnan(q[col]) and col not in pos:
            v = q[col]
            if v < prog.lb[col] - tol or v > prog.ub[col] + tol:
                raise FixingInfeasible(f"column {prog.var_names[col] if prog.var_names else col} fixed outside bounds")

    m_eq, m_in = prog.n_eq, prog.n_ineq
    nnz = np.diff(A_red.indptr)
    keep: list[int] = []
    for r in range(m_eq + m_in):
        if r in drop_rows:
            continue
        if nnz[r] == 0 or not np.any(A_red.data[A_red.indptr[r] : A_red.indptr[r + 1]]):
            if r < m_eq and abs(b_red[r]) > tol * max(1.0, abs(prog.b[r])):
                raise FixingInfeasible(f"row {prog.row_names[r] if prog.row_names else r} reduces to 0 = {b_red[r]:g}")
            if r >= m_eq and b_red[r] < -tol * max(1.0, abs(prog.b[r])):
                raise FixingInfeasible(f"row {prog.row_names[r] if prog.row_names else r} reduces to 0 <= {b_red[r]:g}")
            continue
        keep.append(r)
    n_eq_new = sum(1 for r in keep if r < m_eq)
    n_in_new = len(keep) - n_eq_new
    keep.extend(range(m_eq + m_in, prog.m))  # cone blocks are kept whole
    keep_arr = np.asarray(keep, dtype=int)

    c_red = P.T @ prog.c
    offset = prog.offset + float(prog.c @ q)
    new_index = {col: k for k, col in enumerate(free_cols)}
    row_map = {r: k for k, r in enumerate(keep)}
    groups = tuple(
        tuple(new_index[c] for c in g if c in new_index) for g in prog.groups if any(c in new_index for c in g)
    )
    products = tuple(
        Product(new_index[p.u], new_index[alias[p.x]], new_index[p.y], tuple(row_map[r] for r in p.rows if r in row_map), p.lo, p.hi)
        for p in prog.products
        if p.u in new_index and p.y in new_index and alias[p.x] in new_index
    )
    red = ConicProgram(
        c=np.asarray(c_red).ravel(),
        A=A_red[keep_arr],
        b=b_red[keep_arr],
        n_eq=n_eq_new,
        n_ineq=n_in_new,
        soc_dims=prog.soc_dims,
        lb=lb,
        ub=ub,
        integer=prog.integer[free_cols],
        offset=offset,
        groups=groups,
        products=products,
        var_names=tuple(prog.var_names[c] for c in free_cols) if prog.var_names else (),
        row_names=tuple(prog.row_names[r] for r in keep) if prog.row_names else (),
    )
    return red, Reduction(P=P, q=q, kept_rows=keep_arr)


# ---- portable text export ---------------------------------------------------


def write_cbf(prog: ConicProgram, path: str) -> None:
    """Write the program in Conic Benchmark Format (version 3).

    Variable and row names are emitted as comments so the file stays readable
    by external tools while keeping the symbol tags.
    """
    A = prog.A.tocoo()
    lines = ["# gridtariff conic program", "VER", "3", "", "OBJSENSE", "MIN", ""]
    # variables: all free; bounds become extra rows below
    lines += ["VAR", f"{prog.n} 1", f"F {prog.n}", ""]
    int_cols = np.flatnonzero(prog.integer)
    if int_cols.size:
        lines += ["INT", str(int_cols.size)] + [str(i) for i in int_cols] + [""]
    bnd_rows: list[tuple[int, float, float]] = []  # (col, sign, rhs) meaning sign*x - rhs >= 0
    for col in range(prog.n):
        if np.isfinite(prog.lb[col]):
            bnd_rows.append((col, 1.0, prog.lb[col]))
        if np.isfinite(prog.ub[col]):
            bnd_rows.append((col, -1.0, -prog.ub[col]))
    # CBF constraint form: A x + b in K; we emit rows as (b - A x) in K
    cones = []
    if prog.n_eq:
        cones.append(f"L= {prog.n_eq}")
    if prog.n_ineq:
        cones.append(f"L+ {prog.n_ineq}")
    for d in prog.soc_dims:
        cones.append(f"Q {d}")
    if bnd_rows:
        cones.append(f"L+ {len(bnd_rows)}")
    total = prog.m + len(bnd_rows)
    lines += ["CON", f"{total} {len(cones)}"] + cones + [""]
    nz = [(r, c, -v) for r, c, v in zip(A.row, A.col, A.data)]
    for k, (col, sign, _) in enumerate(bnd_rows):
        nz.append((prog.m + k, col, sign))
    lines += ["ACOORD", str(len(nz))] + [f"{r} {c} {v:.17g}" for r, c, v in nz] + [""]
    bc = [(r, float(prog.b[r])) for r in range(prog.m) if prog.b[r] != 0.0]
    bc += [(prog.m + k, -rhs) for k, (_, _, rhs) in enumerate(bnd_rows) if rhs != 0.0]
    lines += ["BCOORD", str(len(bc))] + [f"{r} {v:.17g}" for r, v in bc] + [""]
    oc = [(i, float(prog.c[i])) for i in range(prog.n) if prog.c[i] != 0.0]
    lines += ["OBJACOORD", str(len(oc))] + [f"{i} {v:.17g}" for i, v in oc] + [""]
    if prog.offset:
        lines += ["OBJBCOORD", f"{prog.offset:.17g}", ""]
    if prog.var_names:
        lines += ["# variables"] + [f"# x{i} {nm}" for i, nm in enumerate(prog.var_names)]
    if prog.row_names:
        lines += ["# rows"] + [f"# r{i} {nm}" for i, nm in enumerate(prog.row_names)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
