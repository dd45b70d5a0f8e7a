"""Validation, tree-path utilities and expansion arithmetic for radial cases."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .case import Line, NetworkCase


class CaseError(ValueError):
    """Base class for structural problems in a case."""


class UnknownNode(CaseError):
    pass


class UnknownExpansion(CaseError):
    pass


@dataclass(frozen=True)
class Violation:
    kind: str  # CyclicTopology, Disconnected, BoundViolation, DuplicateLine, MissingSlack, UnknownNode
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.location}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind: str, location: str, message: str) -> None:
        self.violations.append(Violation(kind, location, message))

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(str(v) for v in self.violations)


def validate_case(case: NetworkCase) -> ValidationReport:
    """Check every type invariant and the radial-tree precondition."""
    rep = ValidationReport()
    ids = [n.id for n in case.nodes]
    known = set(ids)

    zeros = ids.count(0)
    if zeros != 1:
        rep.add("MissingSlack", "nodes", f"node 0 must appear exactly once (found {zeros})")
    for n in case.nodes:
        if ids.count(n.id) > 1 and n.id != 0:
            rep.add("BoundViolation", f"node {n.id}", "duplicate node id")
        if not (0 < n.v_min <= n.v_max):
            rep.add("BoundViolation", f"node {n.id}", f"need 0 < v_min <= v_max, got {n.v_min}, {n.v_max}")

    seen: set[frozenset[int]] = set()
    for i, ln in enumerate(case.lines):
        loc = f"line {ln.key}"
        for end in ln.key:
            if end not in known:
                rep.add("UnknownNode", loc, f"endpoint {end} is not a node")
        pair = frozenset(ln.key)
        if len(pair) == 1:
            rep.add("CyclicTopology", loc, "self-loop")
        if pair in seen:
            rep.add("DuplicateLine", loc, "line appears more than once")
        seen.add(pair)
        if ln.a0 <= 0 or ln.e0 <= 0:
            rep.add("BoundViolation", loc, f"a0 and e0 must be positive, got {ln.a0}, {ln.e0}")
        if ln.f_max < 0 or ln.f_min < 0:
            rep.add("BoundViolation", loc, "flow limits must be non-negative")
        ms = ln.m_values
        if len(set(ms)) != len(ms):
            rep.add("BoundViolation", loc, "expansion fractions must be distinct")
        if 0.0 not in ms:
            rep.add("BoundViolation", loc, "the m = 0 option must be present")
        for opt in ln.expansions:
            if not 0.0 <= opt.m <= 1.0:
                rep.add("BoundViolation", loc, f"expansion fraction {opt.m} outside [0, 1]")
            if opt.m == 0.0 and any((opt.fixed_cost or 0.0, opt.variable_cost or 0.0)):
                rep.add("BoundViolation", loc, "the m = 0 option must cost nothing")

    _check_tree(case, rep, known)

    for kind, parts in (("bid", case.bids), ("offer", case.offers)):
        for p in parts:
            loc = f"{kind} {p.id}"
            if p.node not in known:
                rep.add("UnknownNode", loc, f"node {p.node} does not exist")
            elif p.node == 0:
                rep.add("BoundViolation", loc, "participants cannot sit at the slack bus")
            if p.p_min > p.p_max:
                rep.add("BoundViolation", loc, f"p_min={p.p_min} > p_max={p.p_max}")
            if p.q_min > p.q_max:
                rep.add("BoundViolation", loc, f"q_min={p.q_min} > q_max={p.q_max}")
    for fl in case.fixed_loads:
        loc = f"fixed load at node {fl.node}, t={fl.time}"
        if fl.node not in known:
            rep.add("UnknownNode", loc, f"node {fl.node} does not exist")
        if fl.D < 0:
            rep.add("BoundViolation", loc, f"D={fl.D} is negative")
    for area in case.areas:
        for n in area.nodes:
            if n not in known or n == 0:
                rep.add("UnknownNode", f"area {area.name}", f"node {n} is not a downstream node")
    if case.k_op < 0 or case.k_tot < 0:
        rep.add("BoundViolation", "budgets", "budgets must be non-negative")
    return rep


def _check_tree(case: NetworkCase, rep: ValidationReport, known: set[int]) -> None:
    n_nodes, n_lines = len(known), len(case.lines)
    adj: dict[int, list[int]] = defaultdict(list)
    for ln in case.lines:
        if ln.from_node in known and ln.to_node in known:
            adj[ln.from_node].append(ln.to_node)
            adj[ln.to_node].append(ln.from_node)
    if n_lines >= n_nodes:
        rep.add("CyclicTopology", "lines", f"{n_lines} lines for {n_nodes} nodes: not a tree")
    if 0 not in known:
        return
    reached = {0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in reached:
                reached.add(w)
                queue.append(w)
    missing = sorted(known - reached)
    if missing:
        rep.add("Disconnected", "nodes", f"unreachable from node 0: {missing}")
    # orientation: from_node must be the parent of to_node
    if not missing and n_lines == n_nodes - 1:
        depth = _depths(case)
        for ln in case.lines:
            if depth.get(ln.from_node, 0) >= depth.get(ln.to_node, 0):
                rep.add("BoundViolation", f"line {ln.key}", "lines must be oriented away from node 0")


def _depths(case: NetworkCase) -> dict[int, int]:
    adj: dict[int, list[int]] = defaultdict(list)
    for ln in case.lines:
        adj[ln.from_node].append(ln.to_node)
        adj[ln.to_node].append(ln.from_node)
    depth = {0: 0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in depth:
                depth[w] = depth[v] + 1
                queue.append(w)
    return depth


class Tree:
    """Parent/child structure of a validated radial case (lines point away from node 0)."""

    def __init__(self, case: NetworkCase):
        self.case = case
        self.parent_line: dict[int, int] = {}
        self.children: dict[int, list[int]] = defaultdict(list)
        for idx, ln in enumerate(case.lines):
            self.parent_line[ln.to_node] = idx
            self.children[ln.from_node].append(ln.to_node)
        self._paths: dict[int, tuple[int, ...]] = {}
        self._subtrees: dict[int, frozenset[int]] = {}

    def path_lines(self, n: int) -> tuple[int, ...]:
        """Indices of the lines from node ``n`` up to the root, nearest first."""
        if n not in self.case.node_by_id:
            raise UnknownNode(f"node {n} is not in the case")
        if n not in self._paths:
            out = []
            v = n
            while v != 0:
                idx = self.parent_line[v]
                out.append(idx)
                v = self.case.lines[idx].from_node
            self._paths[n] = tuple(out)
        return self._paths[n]

    def subtree(self, i: int) -> frozenset[int]:
        if i not in self.case.node_by_id:
            raise UnknownNode(f"node {i} is not in the case")
        if i not in self._subtrees:
            out = {i}
            stack = [i]
            while stack:
                v = stack.pop()
                for w in self.children.get(v, ()):
                    out.add(w)
                    stack.append(w)
            self._subtrees[i] = frozenset(out)
        return self._subtrees[i]

    def downstream_of_line(self, line_idx: int) -> frozenset[int]:
        """Nodes fed through the line: the subtree of its far end."""
        return self.subtree(self.case.lines[line_idx].to_node)


def tree_of(case: NetworkCase) -> Tree:
    cached = case.__dict__.get("_tree")
    if cached is None:
        cached = Tree(case)
        case.__dict__["_tree"] = cached
    return cached


def path_to_root(case: NetworkCase, n: int) -> list[tuple[int, int]]:
    """Line keys on the unique path from ``n`` to node 0; empty for the root."""
    tree = tree_of(case)
    return [case.lines[i].key for i in tree.path_lines(n)]


def subtree_nodes(case: NetworkCase, i: int) -> set[int]:
    """Nodes whose root path passes through ``i``, including ``i`` itself."""
    return set(tree_of(case).subtree(i))


class ExpandedParams(NamedTuple):
    a: float
    e: float
    f_add: float
    fixed_cost: float
    variable_cost: float

    @property
    def cost(self) -> float:
        return self.fixed_cost + self.variable_cost


def expanded_params(line: Line, m: float) -> ExpandedParams:
    """Admittance, added capacity and costs when ``line`` is expanded by fraction ``m``."""
    for opt in line.expansions:
        if opt.m == m:
            break
    else:
        raise UnknownExpansion(f"m={m} is not an option of line {line.key}")
    fixed = m * opt.k_fix if opt.fixed_cost is None else opt.fixed_cost
    var = m * opt.k_var * line.f_max if opt.variable_cost is None else opt.variable_cost
    return ExpandedParams(
        a=line.a0 * (1.0 + m),
        e=line.e0 * (1.0 + m),
        f_add=m * line.f_max,
        fixed_cost=fixed,
        variable_cost=var,
    )


def option_params(line: Line) -> list[ExpandedParams]:
    return [expanded_params(line, opt.m) for opt in line.expansions]
