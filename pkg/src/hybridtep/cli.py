"""Command-line harness.

Every solving mode writes one JSON report. Reports hold no wall-clock data,
so a fixed seed gives byte-identical reports; timings go to a sidecar file
next to ``--out`` (``<out>.timing.json``).

Exit codes: 0 success, 2 usage, 3 unreadable or invalid input,
4 infeasible instance or start plan.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .beam_search import BeamParams, beam_search
from .destroy_repair import DrStep, InfeasibleStartError, destroy_and_repair
from .instance import (
    Instance,
    InstanceError,
    Plan,
    check_plan,
    default_penalty,
    plan_investment_cost,
    read_instance,
    serialize,
)
from .instance_gen import (
    CaseFormatError,
    GenerationError,
    adapt_deterministic,
    build_stochastic,
    load_profiles,
    read_case,
    sample_profiles,
    screen,
)
from .mip import build_extensive_mip, solve_bnb
from .ph import InfeasibleInstanceError, PhParams, integrated_solve, run_baseline, run_ph
from . import report as rpt
from .scenario_lp import ScenarioInfeasibleError, ScenarioLpModel, generation_cost, violation

log = logging.getLogger("hybridtep")

MODES = ("gen", "solve-lp", "bnb", "dr", "bs", "solve", "ph", "baseline", "report")
EXIT_USAGE, EXIT_INPUT, EXIT_INFEASIBLE = 2, 3, 4


class InfeasibleStart(Exception):
    pass


@dataclass
class RunConfig:
    mode: str
    instance: str | None = None
    profiles: str | None = None
    penalty: float | None = None
    it_dr: int = 15
    it_bs: int = 15
    eta: float = 0.005
    omega: int = 2
    beam_n: int = 3
    gamma: float = 0.5
    beta: float = 0.25
    tl: float = 60.0
    limit: float = 600.0
    alpha: float = 1.0
    workers: int = 1
    seed: int = 0
    out: str | None = None
    csv: str | None = None
    scenario: int = 0
    plan: str | None = None
    max_iterations: int | None = None
    count: int | None = None
    start: int = 0
    stride: int = 1
    solar_share: float | None = None
    wind_share: float | None = None
    solar_cap: float | None = None
    wind_cap: float | None = None
    no_warm: bool = False
    inputs: tuple[str, ...] = ()
    pairs: str | None = None

    def __post_init__(self):
        positive = {"it_dr": self.it_dr, "it_bs": self.it_bs, "eta": self.eta, "omega": self.omega,
                    "beam_n": self.beam_n, "tl": self.tl, "workers": self.workers}
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ValueError(f"must be positive: {', '.join(bad)}")
        if self.gamma < 0 or self.limit < 0 or self.alpha < 0:
            raise ValueError("gamma, limit and alpha must be nonnegative")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.penalty is not None and not self.penalty > 0:
            raise ValueError("lambda must be positive")

    @property
    def beam(self) -> BeamParams:
        return BeamParams(self.it_bs, self.eta, self.omega, self.beam_n, self.gamma, self.seed)

    @property
    def ph(self) -> PhParams:
        return PhParams(self.beta, self.tl, self.limit, self.alpha, self.it_dr, self.beam,
                        self.workers, self.seed, self.penalty, self.max_iterations)

    def echo(self) -> dict:
        """Everything that shapes the result; output destinations are left out."""
        d = dataclasses.asdict(self)
        d["inputs"] = list(self.inputs)
        del d["out"], d["csv"]
        return d


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridtep", description="Stochastic transmission expansion planning.")
    p.add_argument("mode_arg", nargs="?", choices=MODES, metavar="MODE", help=" | ".join(MODES))
    p.add_argument("inputs", nargs="*", help="run reports (report mode)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--instance", help="instance JSON, or a case file (.m) for gen and quick runs")
    p.add_argument("--profiles", help="scenario profile file (gen)")
    p.add_argument("--lambda", dest="penalty", type=float, help="violation penalty")
    p.add_argument("--itdr", dest="it_dr", type=int, default=15)
    p.add_argument("--itbs", dest="it_bs", type=int, default=15)
    p.add_argument("--eta", type=float, default=0.005)
    p.add_argument("--omega", type=int, default=2)
    p.add_argument("--beam-n", dest="beam_n", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--tl", type=float, default=60.0, help="per-solve time limit (s)")
    p.add_argument("--limit", type=float, default=600.0, help="overall PH time limit (s)")
    p.add_argument("--alpha", type=float, default=1.0, help="rho = alpha * investment cost")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--csv", help="summary CSV path")
    p.add_argument("--scenario", type=int, default=0)
    p.add_argument("--plan", help="comma-separated candidate ids, 'all' or 'none'")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--count", type=int, help="scenarios to sample (gen)")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--solar-share", dest="solar_share", type=float)
    p.add_argument("--wind-share", dest="wind_share", type=float)
    p.add_argument("--solar-cap", dest="solar_cap", type=float)
    p.add_argument("--wind-cap", dest="wind_cap", type=float)
    p.add_argument("--no-warm", dest="no_warm", action="store_true", help="bnb without the all-candidates start")
    p.add_argument("--pairs", help="CSV of system,reference,candidate (report)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    mode = ns.mode or ns.mode_arg
    if mode is None:
        raise ValueError("no mode given")
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    kw = {k: v for k, v in vars(ns).items() if k in fields and k not in ("mode", "inputs")}
    return RunConfig(mode=mode, inputs=tuple(ns.inputs), **kw)


# -- helpers ------------------------------------------------------------------------

def _load(cfg: RunConfig) -> Instance:
    if cfg.instance is None:
        raise ValueError("--instance is required")
    if cfg.instance.endswith(".m"):
        return adapt_deterministic(read_case(cfg.instance))
    return read_instance(cfg.instance)


def _plan(cfg: RunConfig, instance: Instance, default: Plan) -> Plan:
    if cfg.plan is None:
        return default
    text = cfg.plan.strip().lower()
    if text == "all":
        return instance.all_candidates()
    if text in ("none", ""):
        return Plan()
    plan = Plan.of(int(tok) for tok in text.split(","))
    check_plan(instance, plan)
    return plan


def _lam(cfg: RunConfig, instance: Instance) -> float:
    return default_penalty(instance) if cfg.penalty is None else cfg.penalty


def breakdown(instance: Instance, plan: Plan, lam: float, scenarios=None) -> tuple[dict, dict]:
    """Expected cost split and per-scenario violations of ``plan``."""
    scs = instance.scenarios if scenarios is None else [instance.scenario(s) for s in scenarios]
    weight = math.fsum(sc.probability for sc in scs) or 1.0
    gen, viol = 0.0, {}
    for sc in scs:
        m = ScenarioLpModel(instance, sc.id, lam)
        m.set_built_set(plan)
        try:
            op = m.solve()
        except ScenarioInfeasibleError:
            viol[str(sc.id)] = math.inf
            gen = math.inf
            continue
        viol[str(sc.id)] = violation(op)
        gen += sc.probability / weight * generation_cost(op, instance)
    invest = plan_investment_cost(instance, plan)
    exp_v = math.fsum(sc.probability / weight * viol[str(sc.id)] for sc in scs)
    cost = {"investment": invest, "generation": gen, "penalty": lam * exp_v, "total": invest + gen + lam * exp_v}
    return cost, viol


def _base_report(cfg: RunConfig, instance: Instance, plan: Plan, lam: float, scenarios=None) -> dict:
    cost, viol = breakdown(instance, plan, lam, scenarios)
    return {
        "mode": cfg.mode,
        "instance": instance.name,
        "config": cfg.echo(),
        "plan": sorted(plan.built),
        "cost": cost,
        "violations": viol,
    }


def _row(system: str, columns: dict) -> dict:
    return {"system": system, **columns}


# -- modes ------------------------------------------------------------------------------

def run_gen(cfg: RunConfig, timing: dict) -> dict:
    if cfg.instance is None:
        raise ValueError("--instance (a case file) is required")
    base = read_case(cfg.instance)
    if cfg.profiles is None:
        inst = adapt_deterministic(base)
    else:
        text = Path(cfg.profiles).read_text(encoding="utf-8")
        doc = json.loads(text)
        defaults = doc.get("base", {}) if isinstance(doc, dict) else {}
        avg = base.total_capacity / max(len(base.generators), 1)
        profs = load_profiles(text)
        profs = sample_profiles(profs, cfg.count or len(profs), cfg.start, cfg.stride)
        inst = build_stochastic(
            base, profs,
            _pick(cfg.solar_share, defaults.get("solar_share"), 0.2),
            _pick(cfg.wind_share, defaults.get("wind_share"), 0.2),
            _pick(cfg.solar_cap, None, avg),
            _pick(cfg.wind_cap, None, avg),
        )
    screen(inst)
    return {"instance_document": serialize(inst).decode()}


def _pick(*values):
    for v in values:
        if v is not None:
            return v
    return None


def run_solve_lp(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    plan = _plan(cfg, instance, instance.all_candidates())
    m = ScenarioLpModel(instance, cfg.scenario, lam)
    m.set_built_set(plan)
    t = time.perf_counter()
    op = m.solve()
    timing["lp"] = time.perf_counter() - t
    rep = _base_report(cfg, instance, plan, lam, [cfg.scenario])
    rep["lp"] = {
        "scenario": cfg.scenario,
        "objective": op.objective,
        "violation": violation(op),
        "flows_existing": {str(k): v for k, v in sorted(op.f0.items())},
        "flows_candidate": {str(k): v for k, v in sorted(op.f1.items()) if k in plan.built},
        "generation": list(op.g),
    }
    return rep


def run_bnb(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    model = build_extensive_mip(instance)
    warm = None if cfg.no_warm else instance.all_candidates()
    t = time.perf_counter()
    try:
        res = solve_bnb(model, warm=warm, time_limit=cfg.tl)
    except ValueError as exc:
        raise InfeasibleStart(str(exc)) from None
    timing["bnb"] = time.perf_counter() - t
    if res.incumbent is None:
        raise InfeasibleStart("no feasible plan found")
    rep = _base_report(cfg, instance, res.incumbent, lam)
    opt = 100.0 * res.gap if math.isfinite(res.gap) else None
    rep["bnb"] = {"status": res.status, "upper_bound": res.upper_bound, "lower_bound": res.lower_bound,
                  "opt_percent": opt, "nodes": res.node_count}
    rep["table_row"] = _row(instance.name, {"UB": res.upper_bound, "Opt (%)": opt})
    return rep


def _feasible_start(instance: Instance, m: ScenarioLpModel, plan: Plan) -> None:
    if m.evaluate(plan)[1] > 1e-9:
        raise InfeasibleStart(f"start plan violates scenario {m.scenario}")


def run_dr(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    m = ScenarioLpModel(instance, cfg.scenario, lam)
    start = _plan(cfg, instance, instance.all_candidates())
    _feasible_start(instance, m, start)
    trace: list[DrStep] = []
    t = time.perf_counter()
    plan, removed = destroy_and_repair(m, start, cfg.it_dr, tl=cfg.tl, trace=trace)
    timing["dr"] = time.perf_counter() - t
    rep = _base_report(cfg, instance, plan, lam, [cfg.scenario])
    rep["dr"] = {"removed": sorted(removed), "trace": [dataclasses.asdict(s) for s in trace]}
    return rep


def run_bs(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    m = ScenarioLpModel(instance, cfg.scenario, lam)
    start = _plan(cfg, instance, instance.all_candidates())
    _feasible_start(instance, m, start)
    t = time.perf_counter()
    res = beam_search(m, start, cfg.beam, tl=cfg.tl)
    timing["bs"] = time.perf_counter() - t
    rep = _base_report(cfg, instance, res.plan, lam, [cfg.scenario])
    rep["bs"] = {"levels": res.levels, "nodes": len(res.tree.nodes), "tree": res.tree.records()}
    return rep


def run_solve(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    start = _plan(cfg, instance, instance.all_candidates())
    _feasible_start(instance, ScenarioLpModel(instance, cfg.scenario, lam), start)
    t = time.perf_counter()
    plan, _, cost = integrated_solve(instance, cfg.scenario, start, cfg.tl, cfg.ph, seed=cfg.seed)
    timing["solve"] = time.perf_counter() - t
    rep = _base_report(cfg, instance, plan, lam, [cfg.scenario])
    rep["table_row"] = _row(instance.name, {"UB": cost})
    return rep


def run_decomposition(cfg: RunConfig, instance: Instance, timing: dict) -> dict:
    lam = _lam(cfg, instance)
    log_path = None if cfg.out is None else cfg.out + ".log.jsonl"
    if log_path is not None:
        Path(log_path).write_text("")
    runner = run_ph if cfg.mode == "ph" else run_baseline
    t = time.perf_counter()
    res = runner(instance, cfg.ph, log_path=log_path)
    timing[cfg.mode] = time.perf_counter() - t
    timing["iterations"] = [h["wall_time"] for h in res.history]
    rep = _base_report(cfg, instance, res.plan, lam)
    rep["cost"]["total"] = res.penalized_cost
    rep[cfg.mode] = {
        "iterations": res.iterations,
        "history": [{k: v for k, v in h.items() if k != "wall_time"} for h in res.history],
    }
    rep["table_row"] = _row(instance.name, {"UB": res.penalized_cost})
    return rep


def run_report(cfg: RunConfig, timing: dict) -> dict:
    if cfg.pairs is not None:
        rows = rpt.read_pairs(Path(cfg.pairs).read_text(encoding="utf-8"))
    else:
        if not cfg.inputs:
            raise ValueError("report needs run reports or --pairs")
        rows = rpt.pair_runs(rpt.load_reports(Path(p).read_text(encoding="utf-8") for p in cfg.inputs))
    if not rows:
        raise ValueError("nothing to report")
    doc = rpt.to_document(rows)
    doc["table"] = rpt.render(rows)
    if cfg.csv:
        Path(cfg.csv).write_text(rpt.to_csv(rows), encoding="utf-8")
    return doc


SOLVERS = {
    "solve-lp": run_solve_lp,
    "bnb": run_bnb,
    "dr": run_dr,
    "bs": run_bs,
    "solve": run_solve,
    "ph": run_decomposition,
    "baseline": run_decomposition,
}


def execute(cfg: RunConfig) -> tuple[dict | str, dict]:
    timing: dict = {}
    if cfg.mode == "gen":
        return run_gen(cfg, timing)["instance_document"], timing
    if cfg.mode == "report":
        return run_report(cfg, timing), timing
    instance = _load(cfg)
    rep = SOLVERS[cfg.mode](cfg, instance, timing)
    if cfg.csv and "table_row" in rep:
        _write_row_csv(cfg.csv, rep["table_row"])
    return rep, timing


def _write_row_csv(path: str, row: dict) -> None:
    keys = list(row)
    lines = [",".join(keys), ",".join("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _dump(doc) -> str:
    if isinstance(doc, str):
        return doc if doc.endswith("\n") else doc + "\n"
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
    except ValueError as exc:
        print(f"hybridtep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        doc, timing = execute(cfg)
    except (InfeasibleInstanceError, GenerationError, InfeasibleStart, InfeasibleStartError,
            ScenarioInfeasibleError) as exc:
        print(f"hybridtep: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InstanceError, CaseFormatError, OSError, ValueError, KeyError) as exc:
        print(f"hybridtep: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = _dump(doc)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        Path(cfg.out).write_text(text, encoding="utf-8")
        Path(cfg.out + ".timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
