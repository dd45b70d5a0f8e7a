"""CSV reports. Every file opens with ``#`` comment lines carrying the tool
version, the case digest and any run metadata, so a table can be traced back
to its inputs. Nothing time-dependent is written unless asked for, which keeps
repeated single-threaded runs byte-identical."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .conic.bnb import NodeRecord
from .market.clearing import MarketSolution, check_exactness
from .network.case import NetworkCase
from .planning import Evaluation, OracleResult, tie_key
from .tariff import ExpansionPlan, RevenueLedger, price_report, welfare_report


def header(case: NetworkCase, **meta) -> list[str]:
    lines = [f"gridtariff {__version__}", f"case {case.name} {case.digest()}"]
    lines += [f"{k} {v}" for k, v in meta.items() if v is not None]
    return lines


def _num(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_table(path: str | Path, head: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for h in head:
            fh.write(f"# {h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(v) for v in r])
    return path


def read_table(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def _line(key) -> str:
    return f"{key[0]}-{key[1]}"


# ---- market outputs -------------------------------------------------------------------


def write_prices(sol: MarketSolution, path, head: Sequence[str], scenario: str = "") -> Path:
    rep = price_report(sol)
    rows = []
    for (t, n), pi in rep.active.items():
        area = rep.area_of.get(n, "")
        rows.append([scenario, t, n, area, pi, rep.reactive[(t, n)],
                     rep.area_price.get(area, ""), rep.subsidy.get((t, n), "")])
    cols = ["scenario", "t", "node", "area", "pi_p", "pi_q", "pi_D", "subsidy"]
    return write_table(path, head, cols, rows)


def write_flows(sol: MarketSolution, path, head: Sequence[str], scenario: str = "") -> Path:
    """Sending-end flows, ratings and cone residuals per line."""
    case = sol.case
    exact = check_exactness(sol)
    rows = []
    for t in case.periods:
        for ln in case.lines:
            rows.append([scenario, t, _line(ln.key), sol.problem.assignment[ln.key], sol.flow(t, ln.key),
                         sol.flow_limit(ln.key), exact.residuals[(t, ln.key)]])
    cols = ["scenario", "t", "line", "m", "flow_kw", "rating_kw", "cone_residual"]
    return write_table(path, head, cols, rows)


def write_surplus(sol: MarketSolution, path, head: Sequence[str], scenario: str = "") -> Path:
    row = welfare_report(sol.case, sol).as_row()
    return write_table(path, head, ["scenario", *row], [[scenario, *row.values()]])


def write_ledger(led: RevenueLedger, tau: float, path, head: Sequence[str]) -> Path:
    row = {"tau": tau, **led.as_row()}
    return write_table(path, head, list(row), [list(row.values())])


# ---- planning outputs ------------------------------------------------------------------


def write_plan_summary(plan: ExpansionPlan, case: NetworkCase, path, head: Sequence[str]) -> Path:
    rows = [["status", plan.status], ["objective", plan.objective], ["bound", plan.bound],
            ["gap", plan.gap], ["nodes", plan.nodes], ["tau", plan.tau]]
    rows += [[f"term:{k}", v] for k, v in plan.decomposition.items()]
    rows += [[f"u:{_line(ln.key)}", plan.assignment.get(ln.key, 0.0)] for ln in case.lines]
    return write_table(path, head, ["field", "value"], rows)


def write_bnb_log(log: Sequence[NodeRecord], path, head: Sequence[str], timings: bool = False) -> Path:
    cols = ["node", "parent", "depth", "bound", "status", "objective", "incumbent"]
    if timings:
        cols.append("seconds")
    rows = []
    for r in log:
        row = [r.node, r.parent, r.depth, r.bound, r.status, r.objective, r.incumbent]
        rows.append(row + [r.seconds] if timings else row)
    return write_table(path, head, cols, rows)


def write_oracle(result: OracleResult, case: NetworkCase, path, head: Sequence[str]) -> Path:
    """One row per assignment, best first (ties by the lexicographic key)."""
    def order(e: Evaluation):
        return (-e.objective if e.feasible else float("inf"), tie_key(case, e.assignment))

    cols = [f"u:{_line(ln.key)}" for ln in case.lines]
    cols += ["feasible", "objective", "tau", "welfare", "merchandising", "cost", "profit", "reason"]
    rows = []
    for e in sorted(result.table, key=order):
        rows.append([*(e.assignment.get(ln.key, 0.0) for ln in case.lines), int(e.feasible),
                     e.objective, e.tau, e.welfare, e.merchandising, e.cost.total,
                     e.profit if e.feasible else "", e.reason])
    return write_table(path, head, cols, rows)


def write_plan(plan: ExpansionPlan, case: NetworkCase, out: str | Path, head: Sequence[str],
               scenario_names: Sequence[str] | None = None) -> list[Path]:
    """Summary, ledger, B&B log and per-scenario prices, flows and surplus tables."""
    out = Path(out)
    paths = [
        write_plan_summary(plan, case, out / "plan.csv", head),
        write_ledger(plan.ledger, plan.tau, out / "ledger.csv", head),
        write_bnb_log(plan.log, out / "bnb_log.csv", head),
    ]
    names = scenario_names or ([""] if len(plan.solutions) == 1 else [f"s{i}" for i in range(len(plan.solutions))])
    for sol, nm in zip(plan.solutions, names):
        sfx = f"_{nm}" if nm else ""
        paths.append(write_prices(sol, out / f"prices{sfx}.csv", head, nm))
        paths.append(write_flows(sol, out / f"flows{sfx}.csv", head, nm))
        paths.append(write_surplus(sol, out / f"surplus{sfx}.csv", head, nm))
    return paths


def assignment_label(u: Mapping) -> str:
    return ";".join(f"{_line(k)}={m:g}" for k, m in sorted(u.items()) if m) or "none"
