"""Continuous conic solver adapters.

Every backend answers the same contract: given a ConicProgram (integrality
ignored), return a certified status, the primal point, the row duals ``z``
(``A' z + c = 0`` at optimality with ``z`` in the dual cone) and the objective.
"""

from __future__ import annotations

import math

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .program import ConicProgram


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class RelaxationResult:
    status: Status
    x: np.ndarray | None
    z: np.ndarray | None  # duals of the program rows
    z_bounds_lo: np.ndarray | None  # multipliers of x >= lb (0 where lb is infinite)
    z_bounds_hi: np.ndarray | None
    objective: float
    dual_objective: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    raw_status: str = ""
    almost: bool = False
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SolverSettings:
    tol_gap_abs: float = 1e-9
    tol_gap_rel: float = 1e-9
    tol_feas: float = 1e-9
    max_iter: int = 400
    backend: str = "clarabel"
    time_limit: float = math.inf  # seconds per solve (clarabel only)


def _bound_rows(prog: ConicProgram) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, np.ndarray]:
    lo_cols = np.flatnonzero(np.isfinite(prog.lb))
    hi_cols = np.flatnonzero(np.isfinite(prog.ub))
    k_lo, k_hi = lo_cols.size, hi_cols.size
    rows = np.arange(k_lo + k_hi)
    cols = np.concatenate([lo_cols, hi_cols])
    vals = np.concatenate([-np.ones(k_lo), np.ones(k_hi)])
    G = sp.csr_matrix((vals, (rows, cols)), shape=(k_lo + k_hi, prog.n))
    h = np.concatenate([-prog.lb[lo_cols], prog.ub[hi_cols]])
    return G, h, lo_cols, hi_cols


def _split_duals(prog, zfull, lo_cols, hi_cols):
    m = prog.m
    m_lin = prog.n_eq + prog.n_ineq
    z = zfull[:m_lin]
    k = lo_cols.size + hi_cols.size
    zb = zfull[m_lin : m_lin + k]
    zsoc = zfull[m_lin + k :]
    z = np.concatenate([z, zsoc])
    lo = np.zeros(prog.n)
    hi = np.zeros(prog.n)
    lo[lo_cols] = zb[: lo_cols.size]
    hi[hi_cols] = zb[lo_cols.size :]
    assert z.shape[0] == m
    return z, lo, hi


def solve_clarabel(prog: ConicProgram, settings: SolverSettings = SolverSettings()) -> RelaxationResult:
    import clarabel

    G, h, lo_cols, hi_cols = _bound_rows(prog)
    m_lin = prog.n_eq + prog.n_ineq
    A = prog.A.tocsr()
    A_stack = sp.vstack([A[:m_lin], G, A[m_lin:]]).tocsc()
    b_stack = np.concatenate([prog.b[:m_lin], h, prog.b[m_lin:]])
    cones = []
    if prog.n_eq:
        cones.append(clarabel.ZeroConeT(prog.n_eq))
    n_nonneg = prog.n_ineq + G.shape[0]
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
    for d in prog.soc_dims:
        cones.append(clarabel.SecondOrderConeT(d))

    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = settings.tol_gap_abs
    st.tol_gap_rel = settings.tol_gap_rel
    st.tol_feas = settings.tol_feas
    st.tol_ktratio = 1e-8
    st.max_iter = settings.max_iter
    if math.isfinite(settings.time_limit):
        st.time_limit = settings.time_limit
    st.presolve_enable = False  # keep a 1:1 row/dual correspondence
    P = sp.csc_matrix((prog.n, prog.n))
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, prog.c, A_stack, b_stack, cones, st)
    sol = solver.solve()
    dt = time.perf_counter() - t0
    raw = str(sol.status)
    name = raw.split(".")[-1]
    x = np.asarray(sol.x)
    zfull = np.asarray(sol.z)
    if name in ("Solved", "AlmostSolved"):
        z, zlo, zhi = _split_duals(prog, zfull, lo_cols, hi_cols)
        pobj = float(prog.c @ x + prog.offset)
        dobj = float(-(b_stack @ zfull) + prog.offset)
        return RelaxationResult(
            Status.OPTIMAL, x, z, zlo, zhi, pobj, dobj, sol.iterations, dt, raw, almost=name == "AlmostSolved"
        )
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = Status.INFEASIBLE
    elif name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = Status.UNBOUNDED
    else:
        status = Status.NUMERICAL_FAILURE
    return RelaxationResult(status, None, None, None, None, float("nan"), float("nan"), sol.iterations, dt, raw,
                            info={"primal_residual": getattr(sol, "r_prim", None), "dual_residual": getattr(sol, "r_dual", None)})


CVXOPT_TOL_FLOOR = 1e-7


def _ruiz(Aeq: sp.csr_matrix, G: sp.csr_matrix, blocks, iters: int = 25):
    """Row factors for ``Aeq`` and ``G`` and column factors, by Ruiz equilibration."""
    M = sp.vstack([Aeq, G]).tocsr()
    m_eq = Aeq.shape[0]
    r, col = np.ones(M.shape[0]), np.ones(M.shape[1])
    for _ in range(iters):
        S = abs(sp.diags(r) @ M @ sp.diags(col)).tocsr()
        rmax = np.asarray(S.max(axis=1).todense()).ravel()
        cmax = np.asarray(S.max(axis=0).todense()).ravel()
        dr = 1.0 / np.sqrt(np.where(rmax > 0, rmax, 1.0))
        for start, d in blocks:
            sl = slice(m_eq + start, m_eq + start + d)
            dr[sl] = dr[sl].min()
        r *= dr
        col *= 1.0 / np.sqrt(np.where(cmax > 0, cmax, 1.0))
    return r[:m_eq], r[m_eq:], col


def solve_cvxopt(prog: ConicProgram, settings: SolverSettings = SolverSettings()) -> RelaxationResult:
    """Fallback dense-KKT interior point (cvxopt ``conelp``)."""
    import cvxopt
    from cvxopt import solvers

    G_b, h_b, lo_cols, hi_cols = _bound_rows(prog)
    m_lin = prog.n_eq + prog.n_ineq
    A = prog.A.tocsr()
    Aeq, beq = A[: prog.n_eq], prog.b[: prog.n_eq]
    G = sp.vstack([A[prog.n_eq : m_lin], G_b, A[m_lin:]]).tocoo()
    h = np.concatenate([prog.b[prog.n_eq : m_lin], h_b, prog.b[m_lin:]])

    def spm(M):
        M = M.tocoo()
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    # cvxopt does no equilibration; Ruiz-scale rows and columns, keeping a
    # single factor per cone block so cone membership is unchanged
    blocks = [(prog.n_ineq + G_b.shape[0] + sum(prog.soc_dims[:k]), d) for k, d in enumerate(prog.soc_dims)]
    Aeq, G = Aeq.tocsr(), G.tocsr()
    r_eq, r_g, col = _ruiz(Aeq, G, blocks)
    Aeq = sp.diags(r_eq) @ Aeq @ sp.diags(col)
    G = (sp.diags(r_g) @ G @ sp.diags(col)).tocoo()
    beq, h, c = beq * r_eq, h * r_g, prog.c * col
    dims = {"l": prog.n_ineq + G_b.shape[0], "q": list(prog.soc_dims), "s": []}
    # conelp stalls below ~1e-7 on these programs; never ask for more
    floor = CVXOPT_TOL_FLOOR
    opts = {"show_progress": False, "abstol": max(settings.tol_gap_abs, floor),
            "reltol": max(settings.tol_gap_rel, floor), "feastol": max(settings.tol_feas, floor),
            "maxiters": settings.max_iter, "refinement": 2}
    t0 = time.perf_counter()
    args = dict(c=cvxopt.matrix(c), G=spm(G), h=cvxopt.matrix(h), dims=dims)
    if prog.n_eq:
        args.update(A=spm(Aeq), b=cvxopt.matrix(beq))
    try:
        res = solvers.conelp(options=opts, **args)
    except (ValueError, ArithmeticError) as exc:
        return RelaxationResult(Status.NUMERICAL_FAILURE, None, None, None, None, float("nan"),
                                raw_status=str(exc), solve_time=time.perf_counter() - t0)
    dt = time.perf_counter() - t0
    raw = res["status"]
    if raw == "optimal":
        x = np.asarray(res["x"]).ravel() * col
        y = np.asarray(res["y"]).ravel() * r_eq if prog.n_eq else np.zeros(0)
        zg = np.asarray(res["z"]).ravel() * r_g
        h = h / r_g
        zfull = np.concatenate([y, zg])
        z, zlo, zhi = _split_duals(prog, zfull, lo_cols, hi_cols)
        pobj = float(prog.c @ x + prog.offset)
        dobj = float(-(prog.b[: prog.n_eq] @ y) - h @ zg + prog.offset)
        return RelaxationResult(Status.OPTIMAL, x, z, zlo, zhi, pobj, dobj, int(res["iterations"]), dt, raw)
    if raw == "primal infeasible":
        status = Status.INFEASIBLE
    elif raw == "dual infeasible":
        status = Status.UNBOUNDED
    else:
        status = Status.NUMERICAL_FAILURE
    return RelaxationResult(status, None, None, None, None, float("nan"), iterations=int(res.get("iterations", 0)),
                            solve_time=dt, raw_status=raw)


BACKENDS = {"clarabel": solve_clarabel, "cvxopt": solve_cvxopt}


def solve_relaxation(prog: ConicProgram, settings: SolverSettings = SolverSettings()) -> RelaxationResult:
    """Solve the continuous relaxation (integrality marks are ignored)."""
    try:
        fn = BACKENDS[settings.backend]
    except KeyError:
        raise ValueError(f"unknown backend {settings.backend!r}; choose from {sorted(BACKENDS)}") from None
    return fn(prog, settings)
