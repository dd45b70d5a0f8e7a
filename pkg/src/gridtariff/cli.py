"""Command-line entry point.

Exit codes
----------
0  success
1  case failed validation
2  usage error (bad flags or a malformed --u)
3  input file missing, unreadable or malformed
4  infeasible (market, assignment or planning problem)
5  solver failure (numerical trouble or an unexpected status)
6  limit reached; the best incumbent was written
7  problem outside supported limits (search space too large, unrecoverable costs)

Every flag can also be set through an environment variable named
``GRIDTARIFF_<FLAG>`` (e.g. ``GRIDTARIFF_TIME_LIMIT=60``); an explicit flag wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .conic.backends import NumericalFailure, Status
from .conic.bnb import SolveOptions
from .market.clearing import clear, write_solution_csv
from .network import cases as builtin
from .network.case import CaseFormatError, NetworkCase, load_case, save_case
from .market.model import InvalidAssignment
from .network.topology import validate_case
from .planning import SearchSpaceTooLarge, enumerate_oracle, plan, recalibrate
from .reports import (
    header,
    write_flows,
    write_oracle,
    write_plan,
    write_prices,
    write_surplus,
    write_table,
)
from .stochastic import BadProbabilities, ScenarioSet, apply_overrides, load_scenarios
from .tariff import ExpansionPlan, UnrecoverableCosts

log = logging.getLogger("gridtariff")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_LIMIT, EXIT_UNSUPPORTED = range(8)

BUILTIN_CASES: dict[str, Callable[[int], NetworkCase]] = {
    "five-bus": lambda seed: builtin.five_bus(),
    "five-bus-reserve": lambda seed: builtin.five_bus_reserve(0.0),
    "five-bus-reserve-up5": lambda seed: builtin.five_bus_reserve(5.0),
    "five-bus-m1": lambda seed: builtin.five_bus_tariff(builtin.M1_SET),
    "five-bus-m2": lambda seed: builtin.five_bus_tariff(builtin.M2_SET),
    "ieee33": lambda seed: builtin.ieee33(seed),
}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    case: str | None = None
    u: dict[tuple[int, int], float] = field(default_factory=dict)
    out: Path = Path("out")
    gap: float = 1e-6
    time_limit: float = math.inf
    threads: int = 1
    seed: int = builtin.IEEE33_SEED
    scenarios: str | None = None
    extra: dict = field(default_factory=dict)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(gap_abs=self.gap, gap_rel=self.gap, time_limit=self.time_limit, threads=self.threads)


# ---- argument handling ------------------------------------------------------------------


def parse_u(text: str | None) -> dict[tuple[int, int], float]:
    """``"0-1=0.5,1-2=1"`` -> ``{(0, 1): 0.5, (1, 2): 1.0}``."""
    out: dict[tuple[int, int], float] = {}
    if not text:
        return out
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            line, m = part.split("=")
            i, j = line.split("-")
            out[(int(i), int(j))] = float(m)
        except ValueError:
            raise UsageError(f"cannot parse assignment entry {part!r}; expected i-j=m") from None
    return out


def load_any_case(ref: str, seed: int) -> NetworkCase:
    """A JSON case file, or ``builtin:<name>``."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_CASES:
            raise UsageError(f"unknown built-in case {name!r}; choose from {', '.join(BUILTIN_CASES)}")
        return BUILTIN_CASES[name](seed)
    return load_case(ref)


def _env_default(name: str, fallback):
    return os.environ.get(f"GRIDTARIFF_{name.upper().replace('-', '_')}", fallback)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", default=_env_default("case", None),
                        help="case JSON file or builtin:<name>")
    common.add_argument("--out", default=_env_default("out", "out"), help="output directory")
    common.add_argument("--seed", type=int, default=int(_env_default("seed", builtin.IEEE33_SEED)),
                        help="seed for generated cases")
    common.add_argument("--u", default=_env_default("u", None), help="assignment, e.g. 0-1=0.5,1-2=1")
    common.add_argument("--gap", type=float, default=float(_env_default("gap", 1e-6)))
    common.add_argument("--time-limit", type=float, default=float(_env_default("time_limit", math.inf)))
    common.add_argument("--threads", type=int, default=int(_env_default("threads", 1)))
    common.add_argument("--scenarios", default=_env_default("scenarios", None), help="scenario JSON file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gridtariff", description="Distribution-grid expansion and tariff planning.")
    p.add_argument("--version", action="version", version=f"gridtariff {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a case file")
    sub.add_parser("clear", parents=[common], help="clear the market for a fixed assignment")
    sub.add_parser("plan", parents=[common], help="optimal expansion and tariff")
    en = sub.add_parser("enumerate", parents=[common], help="score every assignment exhaustively")
    en.add_argument("--cap", type=int, default=10**6)
    rc = sub.add_parser("recalibrate", parents=[common], help="re-plan after a revenue shortfall")
    rc.add_argument("--realized", required=False, default=_env_default("realized", None),
                    help="case file of the realized market, or an overrides JSON applied to --case")
    rc.add_argument("--tau", type=float, default=None, help="prior tariff (with --u); default: plan --case first")
    rc.add_argument("--shortfall", type=float, default=None, help="measured shortfall in pence")
    sub.add_parser("stoch-plan", parents=[common], help="plan against a scenario set")
    gen = sub.add_parser("gen-case", parents=[common], help="write a built-in case to JSON")
    gen.add_argument("name", choices=sorted(BUILTIN_CASES))
    return p


def config_from(args: argparse.Namespace) -> RunConfig:
    extra = {k: getattr(args, k) for k in ("cap", "realized", "tau", "shortfall", "name") if hasattr(args, k)}
    if args.threads < 1 or args.gap < 0 or args.time_limit <= 0:
        raise UsageError("--threads must be >= 1, --gap >= 0 and --time-limit > 0")
    return RunConfig(args.command, args.case, parse_u(args.u), Path(args.out), args.gap, args.time_limit,
                     args.threads, args.seed, args.scenarios, extra)


# ---- commands ----------------------------------------------------------------------------


def _need_case(cfg: RunConfig) -> NetworkCase:
    if not cfg.case:
        raise UsageError("--case is required")
    return load_any_case(cfg.case, cfg.seed)


def _head(cfg: RunConfig, case: NetworkCase) -> list[str]:
    return header(case, command=cfg.command, seed=cfg.seed)


def cmd_validate(cfg: RunConfig) -> int:
    case = _need_case(cfg)
    rep = validate_case(case)
    print(f"{case.name}: {rep}")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_clear(cfg: RunConfig) -> int:
    case = _need_case(cfg)
    rep = validate_case(case)
    if not rep.ok:
        print(rep, file=sys.stderr)
        return EXIT_INVALID
    sol = clear(case, cfg.u)
    if sol.status != Status.OPTIMAL:
        print(f"market clearing ended with status {sol.status.value}", file=sys.stderr)
        return EXIT_INFEASIBLE if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED) else EXIT_SOLVER
    head = _head(cfg, case)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_prices(sol, cfg.out / "prices.csv", head)
    write_flows(sol, cfg.out / "flows.csv", head)
    write_surplus(sol, cfg.out / "surplus.csv", head)
    write_solution_csv(sol, str(cfg.out / "solution.csv"), head)
    print(f"welfare {sol.objective:.6f} p; reports in {cfg.out}")
    return EXIT_OK


def _plan_exit(p: ExpansionPlan) -> int:
    if p.status == "Optimal":
        return EXIT_OK
    if p.status == "LimitReached":
        if p.assignment:
            log.warning("limit reached; wrote the incumbent (gap %.3g)", p.gap)
        return EXIT_LIMIT
    return EXIT_INFEASIBLE


def _write_plan(cfg: RunConfig, case: NetworkCase, p: ExpansionPlan, names=None) -> None:
    head = _head(cfg, case) + [f"gap_target {cfg.gap:g}", f"threads {cfg.threads}"]
    if p.solutions:
        write_plan(p, case, cfg.out, head, names)


def _report(p: ExpansionPlan) -> None:
    ex = ", ".join(f"{k[0]}-{k[1]}: m={m:g}" for k, m in p.expanded.items()) or "none"
    print(f"status {p.status}; expansions {ex}; tau {p.tau:.6g} p/kW; objective {p.objective:.6f} p; "
          f"nodes {p.nodes}; gap {p.gap:.3g}")


def cmd_plan(cfg: RunConfig) -> int:
    case = _need_case(cfg)
    if not validate_case(case).ok:
        print(validate_case(case), file=sys.stderr)
        return EXIT_INVALID
    p = plan(case, cfg.solve_options())
    _write_plan(cfg, case, p)
    _report(p)
    return _plan_exit(p)


def cmd_enumerate(cfg: RunConfig) -> int:
    case = _need_case(cfg)
    res = enumerate_oracle(case, cfg.extra.get("cap", 10**6))
    write_oracle(res, case, cfg.out / "oracle.csv", _head(cfg, case))
    if res.best is None:
        print("no feasible assignment")
        return EXIT_INFEASIBLE
    print(f"best {res.best.assignment} objective {res.objective:.6f} p tau {res.best.tau:.6g}; "
          f"{len(res.table)} assignments in {cfg.out / 'oracle.csv'}")
    return EXIT_OK


def _realized(cfg: RunConfig, case: NetworkCase) -> NetworkCase:
    ref = cfg.extra.get("realized")
    if not ref:
        raise UsageError("--realized is required")
    if not ref.startswith("builtin:"):
        with open(ref, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "nodes" not in raw:
            return apply_overrides(case, raw)
    return load_any_case(ref, cfg.seed)


def cmd_recalibrate(cfg: RunConfig) -> int:
    case = _need_case(cfg)
    realized = _realized(cfg, case)
    tau = cfg.extra.get("tau")
    if tau is not None:
        prior = ExpansionPlan({ln.key: cfg.u.get(ln.key, 0.0) for ln in case.lines}, tau, math.nan, {}, None)
    else:
        prior = plan(case, cfg.solve_options())
        if prior.status != "Optimal":
            return _plan_exit(prior)
    rc = recalibrate(case, realized, prior, cfg.solve_options(), shortfall=cfg.extra.get("shortfall"))
    head = _head(cfg, rc.case) + [f"prior_tau {prior.tau:.10g}", f"shortfall {rc.shortfall:.10g}"]
    write_table(cfg.out / "recalibration.csv", head, ["field", "value"],
                [["prior_tau", prior.tau], ["shortfall", rc.shortfall], ["k_op", rc.case.k_op],
                 ["tau", rc.plan.tau], ["realized_merchandising", rc.realized_prior.merchandising]])
    if rc.plan.solutions:
        write_plan(rc.plan, rc.case, cfg.out, head)
    print(f"shortfall {rc.shortfall:.6g} p")
    _report(rc.plan)
    return _plan_exit(rc.plan)


def cmd_stoch_plan(cfg: RunConfig) -> int:
    if cfg.scenarios:
        sset = load_scenarios(cfg.scenarios)
    else:
        sset = ScenarioSet.single(_need_case(cfg))
    p = plan(sset.base, cfg.solve_options(), sset)
    _write_plan(cfg, sset.base, p, [s.name for s in sset.scenarios])
    _report(p)
    return _plan_exit(p)


def cmd_gen_case(cfg: RunConfig) -> int:
    case = BUILTIN_CASES[cfg.extra["name"]](cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"{cfg.extra['name']}.json"
    save_case(case, path)
    print(f"wrote {path} (digest {case.digest()}, seed {cfg.seed})")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "clear": cmd_clear,
    "plan": cmd_plan,
    "enumerate": cmd_enumerate,
    "recalibrate": cmd_recalibrate,
    "stoch-plan": cmd_stoch_plan,
    "gen-case": cmd_gen_case,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, InvalidAssignment) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CaseFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BadProbabilities as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SearchSpaceTooLarge, UnrecoverableCosts) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except ValueError as exc:
        # invalid assignments and infeasible prior plans
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
