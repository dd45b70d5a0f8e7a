"""Scenario-based planning: one lower-level block per scenario sharing the
expansion decision and the tariff, with revenue adequacy in expectation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .conic.backends import SolverSettings
from .conic.bnb import SolveOptions
from .market.model import M1_DEFAULT
from .network.case import CaseFormatError, NetworkCase, case_from_dict, case_to_dict, load_case
from .planning import OracleResult, build_single_level, enumerate_oracle, plan
from .reform.single import SingleLevelProblem
from .tariff import ExpansionPlan


class BadProbabilities(ValueError):
    """Scenario probabilities are negative or do not sum to one."""


@dataclass(frozen=True)
class Scenario:
    name: str
    probability: float
    case: NetworkCase


@dataclass(frozen=True)
class ScenarioSet:
    base: NetworkCase
    scenarios: tuple[Scenario, ...]

    def __post_init__(self):
        if not self.scenarios:
            raise BadProbabilities("a scenario set needs at least one scenario")
        probs = [s.probability for s in self.scenarios]
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise BadProbabilities(f"negative or non-finite probability in {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise BadProbabilities(f"probabilities sum to {sum(probs):.12g}, not 1")
        for s in self.scenarios:
            if s.case.lines != self.base.lines or s.case.nodes != self.base.nodes:
                raise CaseFormatError(f"scenario {s.name!r} changes the network; only market data may vary")

    @classmethod
    def single(cls, case: NetworkCase) -> "ScenarioSet":
        return cls(case, (Scenario("base", 1.0, case),))

    @classmethod
    def from_overrides(cls, base: NetworkCase, spec: Sequence[Mapping[str, Any]]) -> "ScenarioSet":
        scs = []
        for i, s in enumerate(spec):
            name = str(s.get("name", f"s{i}"))
            if "probability" not in s:
                raise BadProbabilities(f"scenario {name!r} has no probability")
            scs.append(Scenario(name, float(s["probability"]), apply_overrides(base, s.get("overrides", {}))))
        return cls(base, tuple(scs))

    @property
    def probabilities(self) -> list[float]:
        return [s.probability for s in self.scenarios]


# ---- sparse overrides -------------------------------------------------------------------


def apply_overrides(base: NetworkCase, ov: Mapping[str, Any]) -> NetworkCase:
    """Merge sparse changes over ``base``.

    Recognised keys:
      ``bids`` / ``offers``: {participant id: {field: value}}
      ``fixed_loads``: {"node" or "node@time": D}
      ``trade_prices``: {"time": {field: value}}
      ``scale``: {"fixed_loads" | "bids" | "offers": factor} (quantities only)
      ``k_op``: number
    """
    d = case_to_dict(base)
    d = copy.deepcopy(d)
    unknown = set(ov) - {"bids", "offers", "fixed_loads", "trade_prices", "scale", "k_op", "name"}
    if unknown:
        raise CaseFormatError(f"unknown override keys {sorted(unknown)}")
    for key in ("bids", "offers"):
        by_id = {p["id"]: p for p in d[key]}
        for pid, patch in ov.get(key, {}).items():
            if pid not in by_id:
                raise CaseFormatError(f"override names unknown participant {pid!r}")
            by_id[pid].update(patch)
    loads = {(fl["node"], fl["time"]): fl for fl in d["fixed_loads"]}
    for where, D in ov.get("fixed_loads", {}).items():
        node, _, t = str(where).partition("@")
        k = (int(node), int(t or 0))
        if k in loads:
            loads[k]["D"] = float(D)
        else:
            d["fixed_loads"].append({"node": k[0], "time": k[1], "D": float(D)})
    prices = {tp["time"]: tp for tp in d["trade_prices"]}
    for t, patch in ov.get("trade_prices", {}).items():
        if int(t) not in prices:
            raise CaseFormatError(f"no trade prices for period {t}")
        prices[int(t)].update(patch)
    for key, f in ov.get("scale", {}).items():
        if key == "fixed_loads":
            for fl in d["fixed_loads"]:
                fl["D"] *= f
        elif key in ("bids", "offers"):
            for p in d[key]:
                for fld in ("p_min", "p_max", "q_min", "q_max"):
                    p[fld] *= f
        else:
            raise CaseFormatError(f"cannot scale {key!r}")
    if "k_op" in ov:
        d["budgets"]["k_op"] = float(ov["k_op"])
    if "name" in ov:
        d["name"] = str(ov["name"])
    return case_from_dict(d)


def load_scenarios(path: str | Path) -> ScenarioSet:
    """Scenario file: {"base": <case path, relative to this file>, "scenarios": [...]}."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    base = load_case(path.parent / raw["base"])
    return ScenarioSet.from_overrides(base, raw["scenarios"])


# ---- assembly and planning ------------------------------------------------------------------


def assemble_stochastic(case: NetworkCase, scenarios: ScenarioSet, M1: float = M1_DEFAULT) -> SingleLevelProblem:
    """Single-level program with one block per scenario sharing u and tau."""
    return build_single_level(case, scenarios, M1)


def stochastic_plan(scenarios: ScenarioSet, options: SolveOptions | None = None) -> ExpansionPlan:
    return plan(scenarios.base, options, scenarios)


def stochastic_oracle(scenarios: ScenarioSet, cap: int = 10**6,
                      settings: SolverSettings = SolverSettings()) -> OracleResult:
    """Per-assignment expected-objective enumeration."""
    return enumerate_oracle(scenarios.base, cap, scenarios, settings)
