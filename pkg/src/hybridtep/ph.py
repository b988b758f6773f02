"""Scenario decomposition by progressive hedging, plus the one-pass baseline.

Each scenario subproblem is solved by the integrated pipeline (D&R, then
beam search, then branch-and-bound warm-started from the beam result).
Consensus plans are built from the scenario plans, repaired across
scenarios and compared by penalized expected cost.

The baseline is exactly the first PH iteration: same warm start, same
seeds, no augmentation.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .beam_search import BeamParams, beam_search
from .destroy_repair import destroy_and_repair, repair
from .instance import Instance, Plan, default_penalty, plan_investment_cost
from .mip import build_extensive_mip, check_mip_feasible, ph_coefficients, solve_bnb
from .scenario_lp import OperatingPoint, ScenarioInfeasibleError, ScenarioLpModel, generation_cost, violation

log = logging.getLogger(__name__)

ZERO_VIOLATION = 1e-9


class InfeasibleInstanceError(ValueError):
    """Building every candidate still leaves some scenario overloaded."""


@dataclass
class PhParams:
    beta: float = 0.25
    tl: float = 30.0
    limit: float = 300.0
    alpha: float = 1.0
    it_dr: int = 15
    beam: BeamParams = field(default_factory=BeamParams)
    workers: int = 1
    seed: int = 0
    penalty: float | None = None
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.tl > 0:
            raise ValueError("per-subproblem time limit must be positive")
        if self.limit < 0 or self.alpha < 0 or self.workers < 1:
            raise ValueError("limit and alpha must be >= 0 and workers >= 1")


@dataclass
class PhResult:
    plan: Plan
    penalized_cost: float
    violations: dict[int, float]
    history: list[dict]
    iterations: int


# -- subproblems ------------------------------------------------------------------

def integrated_solve(
    instance: Instance,
    s: int,
    warm: Plan,
    tl: float,
    params: PhParams | None = None,
    extra_costs: Mapping[int, float] | None = None,
    *,
    seed: int | None = None,
) -> tuple[Plan, OperatingPoint, float]:
    """D&R, then beam search, then warm-started B&B on one scenario.

    Costs include ``extra_costs`` on top of the investment costs, so the
    returned cost is the subproblem objective.
    """
    params = params or PhParams()
    deadline = time.perf_counter() + tl
    extra = dict(extra_costs or {})
    costs = {ln.id: ln.invest_cost + extra.get(ln.id, 0.0) for ln in instance.candidate_lines}
    model = ScenarioLpModel(instance, s, params.penalty, invest_costs=costs)

    def left() -> float:
        return max(0.0, deadline - time.perf_counter())

    plan, _ = destroy_and_repair(model, warm, params.it_dr, tl=left())
    beam = replace(params.beam, seed=params.beam.seed if seed is None else seed)
    plan = beam_search(model, plan, beam, tl=left()).plan
    if left() > 0:
        mip = build_extensive_mip(instance, [s], extra_costs=extra)
        try:
            res = solve_bnb(mip, warm=plan, time_limit=left())
        except ValueError:
            # the beam plan sits on a slack tolerance the hard model rejects
            res = solve_bnb(mip, time_limit=left())
        if res.incumbent is not None:
            cand_cost, v = model.evaluate(res.incumbent)
            if v <= ZERO_VIOLATION and cand_cost < model.evaluate(plan)[0]:
                plan = res.incumbent
    cost, _ = model.evaluate(plan)
    return plan, model.last, cost


def _subproblem(task) -> tuple[frozenset[int], float]:
    instance, s, warm, tl, params, extra, seed = task
    plan, _, cost = integrated_solve(instance, s, warm, tl, params, extra, seed=seed)
    return plan.built, cost


def _seed(base: int, iteration: int, s: int) -> int:
    return (base * 1_000_003 + iteration * 7919 + s) % (2**63)


def _solve_all(tasks: list, workers: int) -> list[tuple[frozenset[int], float]]:
    if workers <= 1 or len(tasks) <= 1:
        return [_subproblem(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        # map keeps submission order, so aggregation ignores arrival order
        return list(pool.map(_subproblem, tasks))


# -- consensus ----------------------------------------------------------------------

def consensus_average(
    plans: Mapping[int, Plan], probabilities: Mapping[int, float], candidates: Iterable[int]
) -> dict[int, float]:
    return {
        k: min(1.0, max(0.0, math.fsum(probabilities[s] for s in sorted(plans) if k in plans[s].built)))
        for k in candidates
    }


def beta_intersection(plans: Mapping[int, Plan], beta: float) -> Plan:
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if not plans:
        return Plan()
    n = len(plans)
    count: dict[int, int] = {}
    for p in plans.values():
        for k in p.built:
            count[k] = count.get(k, 0) + 1
    return Plan.of(k for k, c in count.items() if c >= beta * n - 1e-12)


def union_plan(plans: Iterable[Plan]) -> Plan:
    out: set[int] = set()
    for p in plans:
        out |= p.built
    return Plan.of(out)


def _solve_under(model: ScenarioLpModel, built: Iterable[int]):
    model.set_built_set(Plan.of(built))
    try:
        op = model.solve()
    except ScenarioInfeasibleError:
        return None, math.inf
    return op, violation(op)


def evaluate_plan_all_scenarios(
    instance: Instance, plan: Plan, penalty: float | None = None, *, repair_lines: bool = True
) -> tuple[float, Plan, dict[int, float]]:
    """Repair ``plan`` scenario by scenario, sharing every added line.

    Returns the penalized expected cost of the repaired plan, the plan and
    its per-scenario violations. ``repair_lines=False`` prices the plan as is.
    """
    lam = default_penalty(instance) if penalty is None else penalty
    models = {sc.id: ScenarioLpModel(instance, sc.id, lam) for sc in instance.scenarios}
    everything = set(instance.candidate_ids)
    built = set(plan.built)
    while repair_lines:
        grown = False
        for s, m in models.items():
            op, v = _solve_under(m, built)
            if v <= ZERO_VIOLATION or op is None:
                continue
            rm, _, _ = repair(everything - built, m, v, op)
            added = (everything - built) - rm
            if added:
                built |= added
                grown = True
        if not grown:
            break

    final = Plan.of(built)
    violations, gen = {}, 0.0
    for sc in instance.scenarios:
        op, v = _solve_under(models[sc.id], built)
        violations[sc.id] = v
        gen += sc.probability * (generation_cost(op, instance) if op is not None else math.inf)
    expected_v = math.fsum(sc.probability * violations[sc.id] for sc in instance.scenarios)
    return plan_investment_cost(instance, final) + gen + lam * expected_v, final, violations


# -- drivers ------------------------------------------------------------------------

def _require_feasible(instance: Instance, penalty: float | None) -> None:
    report = check_mip_feasible(instance, None, instance.all_candidates(), penalty)
    bad = [s for s, ok in report.feasible.items() if not ok]
    if bad:
        raise InfeasibleInstanceError(f"all-candidates plan infeasible in scenarios {bad}")


def _warm_for(instance: Instance, plan: Plan, violations: Mapping[int, float], s: int) -> Plan:
    return plan if violations.get(s, math.inf) <= ZERO_VIOLATION else instance.all_candidates()


def _emit(record: dict, history: list[dict], log_path) -> None:
    history.append(record)
    log.info("iteration %d: incumbent %.6f", record["iteration"], record["incumbent_cost"])
    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _consensus_step(instance, plans, params, lam):
    inter = beta_intersection(plans, params.beta)
    uni = union_plan(plans.values())
    ci, inter_r, vi = evaluate_plan_all_scenarios(instance, inter, lam)
    cu, uni_r, vu = evaluate_plan_all_scenarios(instance, uni, lam)
    return (ci, inter_r, vi, len(inter.built)), (cu, uni_r, vu, len(uni.built))


def run_ph(instance: Instance, params: PhParams | None = None, log_path=None) -> PhResult:
    """Iterate until the overall time limit (or ``max_iterations``).

    The first iteration has no proximal term; weights and consensus only
    exist once every scenario has produced a plan.
    """
    params = params or PhParams()
    start = time.perf_counter()
    lam = default_penalty(instance) if params.penalty is None else params.penalty
    _require_feasible(instance, lam)

    scenarios = [sc.id for sc in instance.scenarios]
    probs = {sc.id: sc.probability for sc in instance.scenarios}
    cands = instance.candidate_ids
    inc_cost, inc_plan, inc_v = evaluate_plan_all_scenarios(instance, instance.all_candidates(), lam)
    history: list[dict] = []
    weights = {s: {k: 0.0 for k in cands} for s in scenarios}
    xbar = {k: 0.0 for k in cands}
    rho = {ln.id: params.alpha * ln.invest_cost for ln in instance.candidate_lines}

    it = 0
    while params.max_iterations is None or it < params.max_iterations:
        remaining = params.limit - (time.perf_counter() - start)
        if remaining <= 0:
            break
        it += 1
        tl = min(params.tl, remaining)
        tasks = []
        for s in scenarios:
            extra = ph_coefficients(instance, weights[s], xbar, rho) if it > 1 and params.alpha > 0 else None
            warm = _warm_for(instance, inc_plan, inc_v, s)
            tasks.append((instance, s, warm, tl, params, extra, _seed(params.seed, it, s)))
        results = _solve_all(tasks, params.workers)
        plans = {s: Plan(b) for s, (b, _) in zip(scenarios, results)}
        xbar = consensus_average(plans, probs, cands)
        for s in scenarios:
            for k in cands:
                weights[s][k] += rho[k] * ((1.0 if k in plans[s].built else 0.0) - xbar[k])
        (ci, pi, vi, ni), (cu, pu, vu, nu) = _consensus_step(instance, plans, params, lam)
        for cost, plan, v in ((ci, pi, vi), (cu, pu, vu)):
            if cost < inc_cost:
                inc_cost, inc_plan, inc_v = cost, plan, v
        _emit({
            "iteration": it,
            "scenario_costs": [c for _, c in results],
            "xbar_mean": math.fsum(xbar.values()) / max(len(xbar), 1),
            "xbar_fractional": sum(1 for v in xbar.values() if 0 < v < 1),
            "intersection_size": ni,
            "union_size": nu,
            "intersection_cost": ci,
            "union_cost": cu,
            "incumbent_cost": inc_cost,
            "wall_time": time.perf_counter() - start,
        }, history, log_path)
    return PhResult(inc_plan, inc_cost, dict(inc_v), history, it)


def run_baseline(instance: Instance, params: PhParams | None = None, log_path=None) -> PhResult:
    """One unaugmented pass; the better consensus plan, or all candidates."""
    params = params or PhParams()
    start = time.perf_counter()
    lam = default_penalty(instance) if params.penalty is None else params.penalty
    _require_feasible(instance, lam)
    scenarios = [sc.id for sc in instance.scenarios]
    best_cost, best_plan, best_v = evaluate_plan_all_scenarios(instance, instance.all_candidates(), lam)
    warm = instance.all_candidates()
    tasks = [(instance, s, warm, params.tl, params, None, _seed(params.seed, 1, s)) for s in scenarios]
    results = _solve_all(tasks, params.workers)
    plans = {s: Plan(b) for s, (b, _) in zip(scenarios, results)}
    (ci, pi, vi, ni), (cu, pu, vu, nu) = _consensus_step(instance, plans, params, lam)
    for cost, plan, v in ((ci, pi, vi), (cu, pu, vu)):
        if cost < best_cost:
            best_cost, best_plan, best_v = cost, plan, v
    history: list[dict] = []
    _emit({
        "iteration": 1,
        "scenario_costs": [c for _, c in results],
        "intersection_size": ni,
        "union_size": nu,
        "intersection_cost": ci,
        "union_cost": cu,
        "incumbent_cost": best_cost,
        "wall_time": time.perf_counter() - start,
    }, history, log_path)
    return PhResult(best_plan, best_cost, dict(best_v), history, 1)
