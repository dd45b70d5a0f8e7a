"""Branch-and-bound for mixed-integer conic programs.

Binaries that form a one-hot group (``ConicProgram.groups``) are branched as a
unit: a node keeps an allowed option set per group and the children split it.
Binaries outside any group are branched one at a time.

Relaxations come from :func:`solve_relaxation` on the program with the
node's fixings folded in (see :func:`fix_columns`). Nodes whose binaries are
all fixed are leaves; a caller may supply a leaf evaluator that scores a
leaf more accurately than the relaxation solver (the planning model does so
by re-solving the market for the fixed assignment).
"""

from __future__ import annotations

import csv
import heapq
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Optional

import numpy as np

from .backends import RelaxationResult, SolverSettings, Status, solve_relaxation
from .program import ConicProgram, FixingInfeasible, fix_columns


class BnBStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    LIMIT_REACHED = "LimitReached"


@dataclass(frozen=True)
class LeafValue:
    objective: float
    x: np.ndarray


# fixed binary values (every integer column) -> LeafValue, or None if infeasible
LeafEvaluator = Callable[[Mapping[int, float]], Optional[LeafValue]]


@dataclass(frozen=True)
class SolveOptions:
    gap_abs: float = 1e-6
    gap_rel: float = 1e-6
    node_limit: int = 100_000
    time_limit: float = math.inf  # seconds
    threads: int = 1
    branching: str = "group"  # "group" (most fractional one-hot group) or "binary"
    # relaxation objectives are lowered by this relative margin before pruning,
    # which absorbs interior-point inaccuracy on the big-M relaxations
    bound_slack: float = 1e-5
    audit: bool = False  # check incumbents against every row
    settings: SolverSettings = SolverSettings()
    leaf_evaluator: LeafEvaluator | None = None
    tie_break: Callable[[np.ndarray], tuple] | None = None
    log_path: str | None = None
    int_tol: float = 1e-6

    def __post_init__(self):
        if self.node_limit <= 0 or self.time_limit <= 0 or self.threads <= 0:
            raise ValueError("node_limit, time_limit and threads must be positive")
        if self.gap_abs < 0 or self.gap_rel < 0 or self.bound_slack < 0:
            raise ValueError("gap targets and bound_slack must be non-negative")
        if self.branching not in ("group", "binary"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


@dataclass
class NodeRecord:
    node: int
    parent: int
    depth: int
    bound: float
    status: str
    objective: float = math.nan
    incumbent: float = math.nan
    seconds: float = 0.0


@dataclass
class BnBResult:
    status: BnBStatus
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int
    log: list[NodeRecord] = field(default_factory=list)
    elapsed: float = 0.0
    audit: dict[str, float] | None = None


@dataclass(order=True)
class _Node:
    bound: float
    order: tuple  # (-depth, id) makes deeper, then older, nodes win ties
    id: int = field(compare=False)
    parent: int = field(compare=False)
    depth: int = field(compare=False)
    allowed: tuple[frozenset[int], ...] = field(compare=False)  # per group: allowed columns
    single: tuple[tuple[int, float], ...] = field(compare=False)  # fixed lone binaries


@dataclass
class _Outcome:
    status: str
    bound: float = math.inf
    relax: RelaxationResult | None = None
    x_full: np.ndarray | None = None
    leaf: LeafValue | None = None


class _Search:
    def __init__(self, prog: ConicProgram, opts: SolveOptions):
        self.prog = prog
        self.opts = opts
        self.groups = [tuple(g) for g in prog.groups]
        grouped = {c for g in self.groups for c in g}
        self.singles = [int(c) for c in np.flatnonzero(prog.integer) if c not in grouped]
        self.int_cols = sorted(grouped | set(self.singles))
        self.inc_obj = math.inf
        self.inc_x: np.ndarray | None = None
        self.inc_key: tuple | None = None
        self.log: list[NodeRecord] = []
        self.leaf_cache: dict[tuple, LeafValue | None] = {}
        self.ids = itertools.count()
        self.deadline = time.perf_counter() + opts.time_limit

    def settings(self, backend: str | None = None) -> SolverSettings:
        """Solver settings capped by the time left in the search."""
        left = max(1.0, self.deadline - time.perf_counter())
        st = self.opts.settings
        return replace(st, time_limit=min(st.time_limit, left), backend=backend or st.backend)

    # ---- fixings ----------------------------------------------------------------

    def fixing(self, node: _Node) -> dict[int, float] | None:
        fixed: dict[int, float] = {}
        for g, allowed in zip(self.groups, node.allowed):
            if not allowed:
                return None
            for c in g:
                if c not in allowed:
                    fixed[c] = 0.0
            if len(allowed) == 1:
                fixed[next(iter(allowed))] = 1.0
        for c, v in node.single:
            fixed[c] = v
        return fixed

    def is_leaf(self, fixed: Mapping[int, float]) -> bool:
        return all(c in fixed for c in self.int_cols)

    # ---- evaluation --------------------------------------------------------------

    def evaluate_leaf(self, fixed: Mapping[int, float]) -> LeafValue | None:
        key = tuple(int(round(fixed[c])) for c in self.int_cols)
        if key in self.leaf_cache:
            return self.leaf_cache[key]
        try:
            red, rd = fix_columns(self.prog, fixed)
        except FixingInfeasible:
            self.leaf_cache[key] = None
            return None
        if self.opts.leaf_evaluator is not None:
            val = self.opts.leaf_evaluator(fixed)
        else:
            r = solve_relaxation(red, self.settings())
            val = LeafValue(r.objective, rd.lift(r.x)) if r.status == Status.OPTIMAL else None
        self.leaf_cache[key] = val
        return val

    def process(self, node: _Node) -> _Outcome:
        fixed = self.fixing(node)
        if fixed is None:
            return _Outcome("infeasible")
        if self.is_leaf(fixed):
            val = self.evaluate_leaf(fixed)
            if val is None:
                return _Outcome("infeasible")
            return _Outcome("leaf", val.objective, leaf=val)
        try:
            red, rd = fix_columns(self.prog, fixed)
        except FixingInfeasible:
            return _Outcome("infeasible")
        r = solve_relaxation(red, self.settings())
        if r.status == Status.NUMERICAL_FAILURE and self.opts.settings.backend != "cvxopt":
            r = solve_relaxation(red, self.settings("cvxopt"))
        if r.status == Status.INFEASIBLE:
            return _Outcome("infeasible", relax=r)
        if r.status != Status.OPTIMAL:
            # no usable bound: keep the parent's and branch anyway
            return _Outcome("unbounded" if r.status == Status.UNBOUNDED else "failed", node.bound, relax=r)
        slack = self.opts.bound_slack * (1.0 + abs(r.objective))
        return _Outcome("relaxed", max(node.bound, r.objective - slack), relax=r, x_full=rd.lift(r.x))

    # ---- incumbents ----------------------------------------------------------------

    def offer(self, val: LeafValue) -> bool:
        key = self.opts.tie_break(val.x) if self.opts.tie_break else ()
        if self.inc_x is None:
            better = math.isfinite(val.objective)
        elif abs(val.objective - self.inc_obj) <= 1e-9 * (1.0 + abs(self.inc_obj)):
            better = key < self.inc_key
        else:
            better = val.objective < self.inc_obj
        if better:
            self.inc_obj, self.inc_x, self.inc_key = val.objective, val.x, key
            return True
        return False

    def tolerance(self) -> float:
        if not math.isfinite(self.inc_obj):
            return 0.0
        return max(self.opts.gap_abs, self.opts.gap_rel * abs(self.inc_obj))

    def rounded(self, node: _Node, x: np.ndarray) -> dict[int, float]:
        fixed: dict[int, float] = {}
        for g, allowed in zip(self.groups, node.allowed):
            best = max(sorted(allowed), key=lambda c: x[c])
            for c in g:
                fixed[c] = 1.0 if c == best else 0.0
        single = dict(node.single)
        for c in self.singles:
            fixed[c] = single.get(c, float(x[c] > 0.5))
        return fixed

    # ---- branching -----------------------------------------------------------------

    def children(self, node: _Node, x: np.ndarray | None) -> list[_Node]:
        """Two children; the one holding the relaxation's preferred side goes first."""
        tol = self.opts.int_tol
        open_groups = [gi for gi, a in enumerate(node.allowed) if len(a) > 1]
        fixed_single = dict(node.single)
        open_singles = [c for c in self.singles if c not in fixed_single]
        split = None
        if self.opts.branching == "group" and open_groups:
            def frac(gi: int) -> float:
                if x is None:
                    return 0.0
                return 1.0 - max(x[c] for c in node.allowed[gi])

            gi = max(open_groups, key=lambda g: (frac(g), len(node.allowed[g]), -g))
            split = ("group", gi)
        if split is None and open_singles:
            def sfrac(c: int) -> float:
                return 0.0 if x is None else min(x[c], 1.0 - x[c])

            split = ("single", max(open_singles, key=lambda c: (sfrac(c), -c)))
        if split is None and open_groups:
            split = ("group", open_groups[0])
        kids = []
        depth = node.depth + 1
        if split[0] == "group":
            gi = split[1]
            opts = [c for c in self.groups[gi] if c in node.allowed[gi]]
            if x is None:
                left, right = opts[: len(opts) // 2], opts[len(opts) // 2 :]
            elif 1.0 - max(x[c] for c in opts) <= tol:
                top = max(opts, key=lambda c: x[c])
                left, right = [top], [c for c in opts if c != top]
            else:
                # cut the ordered option list where the relaxation mass crosses one half
                mass = np.cumsum([max(x[c], 0.0) for c in opts])
                k = int(np.searchsorted(mass, 0.5 * mass[-1]))
                k = min(max(k, 0), len(opts) - 2) + 1
                left, right = opts[:k], opts[k:]
                if x is not None and sum(x[c] for c in right) > sum(x[c] for c in left):
                    left, right = right, left
            for part in (left, right):
                allowed = list(node.allowed)
                allowed[gi] = frozenset(part)
                kids.append(_Node(node.bound, (-depth, 0), 0, node.id, depth, tuple(allowed), node.single))
        else:
            c = split[1]
            first = 1.0 if x is not None and x[c] > 0.5 else 0.0
            for v in (first, 1.0 - first):
                kids.append(_Node(node.bound, (-depth, 0), 0, node.id, depth, node.allowed, node.single + ((c, v),)))
        for k in kids:
            k.id = next(self.ids)
            k.order = (-depth, k.id)
        return kids


def branch_and_bound(prog: ConicProgram, opts: SolveOptions = SolveOptions()) -> BnBResult:
    """Minimize ``prog`` with its integrality marks enforced.

    Node selection is best-bound, with a depth-first plunge into the child the
    relaxation prefers after every branching. Each relaxation's rounded
    assignment is scored as a heuristic incumbent.
    """
    t0 = time.perf_counter()
    S = _Search(prog, opts)
    root = _Node(-math.inf, (0, 0), next(S.ids), -1, 0, tuple(frozenset(g) for g in S.groups), ())
    heap: list[_Node] = []
    dive: list[_Node] = [root]
    n_done = 0
    limit_hit = False
    closed = math.inf  # smallest bound among nodes pruned by bound
    pool = ThreadPoolExecutor(max_workers=opts.threads) if opts.threads > 1 else None

    def pick() -> list[_Node]:
        if dive:
            return [dive.pop()]
        batch = []
        while heap and len(batch) < opts.threads:
            batch.append(heapq.heappop(heap))
        return batch

    try:
        while dive or heap:
            if n_done >= opts.node_limit or time.perf_counter() - t0 > opts.time_limit:
                limit_hit = True
                break
            batch = pick()
            live = []
            for nd in batch:
                if nd.bound >= S.inc_obj - S.tolerance():
                    closed = min(closed, nd.bound)
                    S.log.append(NodeRecord(nd.id, nd.parent, nd.depth, nd.bound, "pruned", incumbent=S.inc_obj))
                else:
                    live.append(nd)
            if not live:
                continue
            ts = time.perf_counter()
            if pool is not None and len(live) > 1:
                outs = list(pool.map(S.process, live))
            else:
                outs = [S.process(nd) for nd in live]
            dt = (time.perf_counter() - ts) / len(live)
            for nd, out in zip(live, outs):
                n_done += 1
                rec = NodeRecord(nd.id, nd.parent, nd.depth, out.bound, out.status, seconds=dt)
                if out.status == "leaf":
                    S.offer(out.leaf)
                    rec.objective = out.leaf.objective
                elif out.status in ("relaxed", "failed", "unbounded"):
                    x = out.x_full
                    if x is not None:
                        rec.objective = out.relax.objective
                        guess = S.rounded(nd, x)
                        val = S.evaluate_leaf(guess)
                        if val is not None:
                            S.offer(val)
                    if out.bound < S.inc_obj - S.tolerance():
                        nd.bound = out.bound
                        kids = S.children(nd, x)
                        dive.append(kids[0])  # plunge into the preferred child
                        heapq.heappush(heap, kids[1])
                        rec.status = "branched"
                    else:
                        rec.status = "pruned"
                        closed = min(closed, out.bound)
                rec.incumbent = S.inc_obj
                S.log.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()

    open_bounds = [nd.bound for nd in itertools.chain(heap, dive)]
    bound = min(open_bounds + [S.inc_obj, closed])
    if S.inc_x is None:
        status = BnBStatus.LIMIT_REACHED if limit_hit else BnBStatus.INFEASIBLE
        bound = min(open_bounds) if (limit_hit and open_bounds) else math.inf
        res = BnBResult(status, None, math.inf, bound, math.inf, n_done, S.log, time.perf_counter() - t0)
    else:
        status = BnBStatus.LIMIT_REACHED if limit_hit else BnBStatus.OPTIMAL
        gap = max(0.0, S.inc_obj - bound)
        res = BnBResult(status, S.inc_x, S.inc_obj, bound, gap, n_done, S.log, time.perf_counter() - t0)
        if opts.audit:
            res.audit = prog.residuals(S.inc_x)
    if opts.log_path:
        write_log(res.log, opts.log_path)
    return res


def write_log(log: list[NodeRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "parent", "depth", "bound", "status", "objective", "incumbent", "seconds"])
        for r in log:
            w.writerow([r.node, r.parent, r.depth, f"{r.bound:.10g}", r.status, f"{r.objective:.10g}",
                        f"{r.incumbent:.10g}", f"{r.seconds:.6f}"])
