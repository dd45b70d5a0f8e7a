"""Planning-instance data model and JSON case-file I/O.

Units: prices in p/kWh, powers in kW/kVAr, costs in pence, admittances in
per-unit on the case's base power. One period lasts one hour.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Node:
    id: int
    v_min: float = 0.8
    v_max: float = 1.2


@dataclass(frozen=True)
class ExpansionOption:
    """One lumpy step ``m`` for a line.

    ``k_fix`` (pence) and ``k_var`` (pence/kW) are quoted at the m = 1 basis and
    scaled by ``m``. ``fixed_cost``/``variable_cost`` override the scaled values
    with absolute amounts when given.
    """

    m: float
    k_fix: float = 0.0
    k_var: float = 0.0
    fixed_cost: float | None = None
    variable_cost: float | None = None


@dataclass(frozen=True)
class Line:
    from_node: int
    to_node: int
    a0: float
    e0: float
    f_max: float
    f_min: float
    expansions: tuple[ExpansionOption, ...] = (ExpansionOption(0.0),)

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_node, self.to_node)

    @property
    def m_values(self) -> tuple[float, ...]:
        return tuple(opt.m for opt in self.expansions)


@dataclass(frozen=True)
class DemandBid:
    id: str
    node: int
    time: int
    price: float
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0


@dataclass(frozen=True)
class GenOffer:
    id: str
    node: int
    time: int
    price: float
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0


@dataclass(frozen=True)
class FixedLoad:
    node: int
    time: int
    D: float


@dataclass(frozen=True)
class TradePrices:
    time: int
    c_p0: float
    c_q0: float = 0.0
    c_up: float = 0.0
    c_down: float = 0.0


@dataclass(frozen=True)
class Area:
    name: str
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class NetworkCase:
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    bids: tuple[DemandBid, ...] = ()
    offers: tuple[GenOffer, ...] = ()
    fixed_loads: tuple[FixedLoad, ...] = ()
    trade_prices: tuple[TradePrices, ...] = ()
    k_op: float = 0.0
    k_tot: float = float("inf")
    chain_constraint: bool = False
    areas: tuple[Area, ...] = ()
    name: str = "case"
    base_kv: float = 1.0
    base_kva: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    # ---- derived lookups -------------------------------------------------

    @cached_property
    def periods(self) -> tuple[int, ...]:
        times = {tp.time for tp in self.trade_prices}
        times |= {b.time for b in self.bids} | {o.time for o in self.offers}
        times |= {fl.time for fl in self.fixed_loads}
        return tuple(sorted(times)) or (0,)

    @cached_property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(sorted(n.id for n in self.nodes))

    @cached_property
    def downstream_nodes(self) -> tuple[int, ...]:
        """All nodes except the slack bus (node 0)."""
        return tuple(n for n in self.node_ids if n != 0)

    @cached_property
    def node_by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def line_index(self) -> dict[tuple[int, int], int]:
        return {ln.key: i for i, ln in enumerate(self.lines)}

    @cached_property
    def prices_by_time(self) -> dict[int, TradePrices]:
        out = {tp.time: tp for tp in self.trade_prices}
        for t in self.periods:
            out.setdefault(t, TradePrices(time=t, c_p0=0.0))
        return out

    def fixed_load(self, t: int, n: int) -> float:
        return self._loads.get((t, n), 0.0)

    @cached_property
    def _loads(self) -> dict[tuple[int, int], float]:
        out: dict[tuple[int, int], float] = {}
        for fl in self.fixed_loads:
            out[(fl.time, fl.node)] = out.get((fl.time, fl.node), 0.0) + fl.D
        return out

    def bids_at(self, t: int, n: int) -> list[DemandBid]:
        return [b for b in self.bids if b.time == t and b.node == n]

    def offers_at(self, t: int, n: int) -> list[GenOffer]:
        return [o for o in self.offers if o.time == t and o.node == n]

    @cached_property
    def area_list(self) -> tuple[Area, ...]:
        if self.areas:
            return self.areas
        return (Area("all", self.downstream_nodes),)

    def charging_base(self) -> float:
        """Capacity billed by the tariff: fixed load plus contracted maxima, kW·h."""
        total = sum(fl.D for fl in self.fixed_loads if fl.node != 0)
        total += sum(b.p_max for b in self.bids if b.node != 0)
        total += sum(o.p_max for o in self.offers if o.node != 0)
        return total

    def digest(self) -> str:
        """SHA-256 of the canonical JSON encoding (first 16 hex chars)."""
        blob = json.dumps(case_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_updates(self, **changes: Any) -> "NetworkCase":
        return replace(self, **changes)


# ---- serialization -------------------------------------------------------


def _opt_to_dict(opt: ExpansionOption) -> dict[str, Any]:
    d: dict[str, Any] = {"m": opt.m, "k_fix": opt.k_fix, "k_var": opt.k_var}
    if opt.fixed_cost is not None:
        d["fixed_cost"] = opt.fixed_cost
    if opt.variable_cost is not None:
        d["variable_cost"] = opt.variable_cost
    return d


def _finite_or_none(x: float) -> float | None:
    return None if x == float("inf") else x


def case_to_dict(case: NetworkCase) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "name": case.name,
        "base": {"kv": case.base_kv, "kva": case.base_kva},
        "nodes": [asdict(n) for n in case.nodes],
        "lines": [
            {
                "from": ln.from_node,
                "to": ln.to_node,
                "a0": ln.a0,
                "e0": ln.e0,
                "f_max": ln.f_max,
                "f_min": ln.f_min,
                "expansions": [_opt_to_dict(o) for o in ln.expansions],
            }
            for ln in case.lines
        ],
        "bids": [asdict(b) for b in case.bids],
        "offers": [asdict(o) for o in case.offers],
        "fixed_loads": [asdict(fl) for fl in case.fixed_loads],
        "trade_prices": [asdict(tp) for tp in case.trade_prices],
        "budgets": {"k_op": case.k_op, "k_tot": _finite_or_none(case.k_tot)},
        "areas": [{"name": a.name, "nodes": list(a.nodes)} for a in case.areas],
        "options": {"chain_constraint": case.chain_constraint},
        "meta": case.meta,
    }


class CaseFormatError(ValueError):
    """Raised when a case file cannot be parsed into a NetworkCase."""


def _require(d: dict[str, Any], key: str, where: str) -> Any:
    if key not in d:
        raise CaseFormatError(f"{where}: missing field '{key}'")
    return d[key]


def _expansions(raw: Iterable[dict[str, Any]] | None, where: str) -> tuple[ExpansionOption, ...]:
    if raw is None:
        return (ExpansionOption(0.0),)
    opts = []
    for j, e in enumerate(raw):
        opts.append(
            ExpansionOption(
                m=float(_require(e, "m", f"{where}.expansions[{j}]")),
                k_fix=float(e.get("k_fix", 0.0)),
                k_var=float(e.get("k_var", 0.0)),
                fixed_cost=None if e.get("fixed_cost") is None else float(e["fixed_cost"]),
                variable_cost=None if e.get("variable_cost") is None else float(e["variable_cost"]),
            )
        )
    return tuple(opts)


def case_from_dict(d: dict[str, Any]) -> NetworkCase:
    try:
        nodes = tuple(
            Node(id=int(_require(n, "id", f"nodes[{i}]")), v_min=float(n.get("v_min", 0.8)),
                 v_max=float(n.get("v_max", 1.2)))
            for i, n in enumerate(_require(d, "nodes", "case"))
        )
        lines = []
        for i, ln in enumerate(_require(d, "lines", "case")):
            where = f"lines[{i}]"
            f_max = float(_require(ln, "f_max", where))
            lines.append(
                Line(
                    from_node=int(_require(ln, "from", where)),
                    to_node=int(_require(ln, "to", where)),
                    a0=float(_require(ln, "a0", where)),
                    e0=float(_require(ln, "e0", where)),
                    f_max=f_max,
                    f_min=float(ln.get("f_min", f_max)),
                    expansions=_expansions(ln.get("expansions"), where),
                )
            )

        def participants(key: str, cls: type) -> tuple:
            out = []
            for i, p in enumerate(d.get(key, [])):
                where = f"{key}[{i}]"
                out.append(
                    cls(
                        id=str(p.get("id", f"{key[:-1]}{i}")),
                        node=int(_require(p, "node", where)),
                        time=int(p.get("time", 0)),
                        price=float(_require(p, "price", where)),
                        p_min=float(p.get("p_min", 0.0)),
                        p_max=float(p.get("p_max", 0.0)),
                        q_min=float(p.get("q_min", 0.0)),
                        q_max=float(p.get("q_max", 0.0)),
                    )
                )
            return tuple(out)

        loads = tuple(
            FixedLoad(node=int(_require(fl, "node", f"fixed_loads[{i}]")), time=int(fl.get("time", 0)),
                      D=float(_require(fl, "D", f"fixed_loads[{i}]")))
            for i, fl in enumerate(d.get("fixed_loads", []))
        )
        prices = tuple(
            TradePrices(time=int(tp.get("time", 0)), c_p0=float(_require(tp, "c_p0", f"trade_prices[{i}]")),
                        c_q0=float(tp.get("c_q0", 0.0)), c_up=float(tp.get("c_up", 0.0)),
                        c_down=float(tp.get("c_down", 0.0)))
            for i, tp in enumerate(d.get("trade_prices", []))
        )
        budgets = d.get("budgets", {})
        k_tot = budgets.get("k_tot")
        base = d.get("base", {})
        return NetworkCase(
            nodes=nodes,
            lines=tuple(lines),
            bids=participants("bids", DemandBid),
            offers=participants("offers", GenOffer),
            fixed_loads=loads,
            trade_prices=prices,
            k_op=float(budgets.get("k_op", 0.0)),
            k_tot=float("inf") if k_tot is None else float(k_tot),
            chain_constraint=bool(d.get("options", {}).get("chain_constraint", False)),
            areas=tuple(Area(str(a["name"]), tuple(int(n) for n in a["nodes"])) for a in d.get("areas", [])),
            name=str(d.get("name", "case")),
            base_kv=float(base.get("kv", 1.0)),
            base_kva=float(base.get("kva", 1.0)),
            meta=dict(d.get("meta", {})),
        )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, CaseFormatError):
            raise
        raise CaseFormatError(str(exc)) from exc


def load_case(path: str | Path) -> NetworkCase:
    with open(path, encoding="utf-8") as fh:
        return case_from_dict(json.load(fh))


def save_case(case: NetworkCase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(case_to_dict(case), fh, indent=1, sort_keys=False)
        fh.write("\n")
