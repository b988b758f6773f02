"""Extensive-form expansion MIP and a best-first branch-and-bound.

Candidate voltage laws are big-M disjunctions. Angles are boxed to
``[-theta, theta]``; the default box is wide enough never to cut off a
physically feasible dispatch (see ``safe_angle_bound``), and each ``M_k``
is tightened with the shortest existing-line path between the endpoints.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .instance import Instance, Plan, check_plan
from .lp import INF, Basis, LinearProgram, LpStatus, solve_lp
from .scenario_lp import OperatingPoint, ScenarioInfeasibleError, ScenarioLpModel, reference_buses, violation

INT_TOL = 1e-6
FEASIBLE_TOL = 1e-6
GAP_EPS = 1e-9


class BnbStatus:
    OPTIMAL = "optimal"
    TIME_LIMIT = "time_limit"
    INFEASIBLE = "infeasible"


@dataclass
class MipModel:
    instance: Instance
    lp: LinearProgram
    x: dict[int, int]
    scenarios: tuple[int, ...]
    probabilities: dict[int, float]
    blocks: dict[int, dict[str, dict[int, int]]]
    big_m: dict[int, float]
    theta: float
    x_costs: dict[int, float]


@dataclass
class BnbResult:
    incumbent: Plan | None
    operating_points: dict[int, OperatingPoint]
    upper_bound: float
    lower_bound: float
    gap: float
    node_count: int
    status: str


def safe_angle_bound(instance: Instance) -> float:
    """Sum of F/|B| over all lines: no feasible dispatch needs wider angles."""
    return math.fsum(ln.capacity / abs(ln.susceptance) for ln in instance.lines)


def _existing_distances(instance: Instance) -> list[list[float]]:
    n = instance.num_buses
    d = [[INF] * n for _ in range(n)]
    for b in range(n):
        d[b][b] = 0.0
    for ln in instance.existing_lines:
        w = ln.capacity / abs(ln.susceptance)
        a, b = ln.from_bus, ln.to_bus
        if w < d[a][b]:
            d[a][b] = d[b][a] = w
    for k in range(n):
        dk = d[k]
        for i in range(n):
            dik = d[i][k]
            if dik == INF:
                continue
            di = d[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return d


def build_extensive_mip(
    instance: Instance,
    scenarios: Sequence[int] | None = None,
    theta: float | None = None,
    *,
    extra_costs: Mapping[int, float] | None = None,
) -> MipModel:
    """Continuous relaxation of the extensive form over ``scenarios``.

    Probabilities are renormalized over the subset. ``extra_costs`` adds a
    per-candidate linear term to the objective (used by PH subproblems).
    """
    if scenarios is None:
        scenarios = [sc.id for sc in instance.scenarios]
    scenarios = tuple(scenarios)
    if not scenarios:
        raise ValueError("scenario subset is empty")
    if theta is None:
        theta = safe_angle_bound(instance)
    if not theta > 0:
        raise ValueError(f"angle bound must be positive, got {theta}")
    total = math.fsum(instance.scenario(s).probability for s in scenarios)
    if total > 0:
        probs = {s: instance.scenario(s).probability / total for s in scenarios}
    else:
        probs = {s: 1.0 / len(scenarios) for s in scenarios}

    extra = dict(extra_costs or {})
    dist = _existing_distances(instance)
    big_m = {
        ln.id: abs(ln.susceptance) * min(2.0 * theta, dist[ln.from_bus][ln.to_bus])
        for ln in instance.candidate_lines
    }
    lp = LinearProgram()
    x_costs = {ln.id: ln.invest_cost + extra.get(ln.id, 0.0) for ln in instance.candidate_lines}
    x = {k: lp.add_var(0.0, 1.0, x_costs[k], f"x_{k}") for k in sorted(x_costs)}
    refs = set(reference_buses(instance))
    blocks = {}
    for s in scenarios:
        sc = instance.scenario(s)
        p = probs[s]
        f0 = {ln.id: lp.add_var(-ln.capacity, ln.capacity, 0.0, f"f0_{ln.id}_{s}") for ln in instance.existing_lines}
        f1 = {ln.id: lp.add_var(-INF, INF, 0.0, f"f1_{ln.id}_{s}") for ln in instance.candidate_lines}
        g = {
            gen.id: lp.add_var(sc.gen_lower[gen.id], sc.gen_upper[gen.id], p * gen.cost, f"g_{gen.id}_{s}")
            for gen in instance.generators
        }
        th = {
            b: lp.add_var(0.0, 0.0, 0.0, f"theta_{b}_{s}") if b in refs else lp.add_var(-theta, theta, 0.0, f"theta_{b}_{s}")
            for b in range(instance.num_buses)
        }
        balance: list[dict[int, float]] = [{} for _ in range(instance.num_buses)]
        for gen in instance.generators:
            balance[gen.bus][g[gen.id]] = 1.0
        for ln in instance.lines:
            var = f1[ln.id] if ln.is_candidate else f0[ln.id]
            balance[ln.from_bus][var] = balance[ln.from_bus].get(var, 0.0) - 1.0
            balance[ln.to_bus][var] = balance[ln.to_bus].get(var, 0.0) + 1.0
        for b in range(instance.num_buses):
            lp.add_row(balance[b], sc.demand[b], sc.demand[b], f"kcl_{b}_{s}")
        for ln in instance.existing_lines:
            bb = ln.susceptance
            lp.add_row([(f0[ln.id], 1.0), (th[ln.from_bus], -bb), (th[ln.to_bus], bb)], 0.0, 0.0, f"kvl0_{ln.id}_{s}")
        for ln in instance.candidate_lines:
            k, bb, m = ln.id, ln.susceptance, big_m[ln.id]
            lp.add_row([(f1[k], 1.0), (x[k], -ln.capacity)], -INF, 0.0, f"cap1p_{k}_{s}")
            lp.add_row([(f1[k], -1.0), (x[k], -ln.capacity)], -INF, 0.0, f"cap1n_{k}_{s}")
            law = [(f1[k], 1.0), (th[ln.from_bus], -bb), (th[ln.to_bus], bb)]
            lp.add_row(law + [(x[k], m)], -INF, m, f"kvl1p_{k}_{s}")
            lp.add_row([(v, -c) for v, c in law] + [(x[k], m)], -INF, m, f"kvl1n_{k}_{s}")
        blocks[s] = {"f0": f0, "f1": f1, "g": g, "theta": th}
    return MipModel(instance, lp, x, scenarios, probs, blocks, big_m, float(theta), x_costs)


def build_ph_subproblem(
    instance: Instance,
    s: int,
    weights: Mapping[int, float],
    consensus: Mapping[int, float],
    rho: Mapping[int, float],
    theta: float | None = None,
) -> MipModel:
    """Single-scenario MIP with the linearized proximal term.

    Adds ``(w_k + rho_k * (1/2 - xbar_k)) * x_k`` per candidate, which equals
    ``w x + rho/2 (x - xbar)^2`` on binaries up to a constant.
    """
    if any(r < 0 for r in rho.values()):
        raise ValueError("rho must be nonnegative")
    extra = ph_coefficients(instance, weights, consensus, rho)
    return build_extensive_mip(instance, [s], theta, extra_costs=extra)


def ph_coefficients(instance, weights, consensus, rho) -> dict[int, float]:
    return {
        k: weights.get(k, 0.0) + rho.get(k, 0.0) * (0.5 - consensus.get(k, 0.0))
        for k in instance.candidate_ids
    }


# -- plan evaluation ------------------------------------------------------------

def _operating_points(model: MipModel, values) -> dict[int, OperatingPoint]:
    inst = model.instance
    out = {}
    for s, blk in model.blocks.items():
        g = tuple(float(values[blk["g"][i]]) for i in range(len(inst.generators)))
        gbus = [0.0] * inst.num_buses
        for gen in inst.generators:
            gbus[gen.bus] += g[gen.id]
        out[s] = OperatingPoint(
            scenario=s,
            f0={j: float(values[v]) for j, v in blk["f0"].items()},
            f1={k: float(values[v]) for k, v in blk["f1"].items()},
            y0={j: 0.0 for j in blk["f0"]},
            y1={k: 0.0 for k in blk["f1"]},
            g=g,
            g_bus=tuple(gbus),
            theta=tuple(float(values[blk["theta"][b]]) for b in range(inst.num_buses)),
            objective=math.fsum(inst.generators[i].cost * g[i] for i in range(len(g))),
        )
    return out


def _fix_plan(model: MipModel, plan: Plan) -> list[tuple[int, float, float]]:
    saved = []
    for k, v in model.x.items():
        saved.append((v, *model.lp.bounds(v)))
        val = 1.0 if k in plan.built else 0.0
        model.lp.set_var_bounds(v, val, val)
    return saved


def _restore(model: MipModel, saved) -> None:
    for v, lo, hi in saved:
        model.lp.set_var_bounds(v, lo, hi)


def evaluate_plan(model: MipModel, plan: Plan, basis: Basis | None = None):
    """Objective and dispatch with ``x`` fixed to ``plan``; None if infeasible."""
    check_plan(model.instance, plan)
    saved = _fix_plan(model, plan)
    try:
        sol = solve_lp(model.lp, basis=basis)
    finally:
        _restore(model, saved)
    if not sol.optimal:
        return None
    return sol.objective, _operating_points(model, sol.values), sol.basis


# -- branch and bound -------------------------------------------------------------

@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixed: tuple[tuple[int, int], ...] = field(compare=False)
    basis: Basis | None = field(compare=False, default=None)


def _gap(ub: float, lb: float) -> float:
    if ub == INF:
        return INF
    if lb == -INF:
        return INF
    return max(0.0, (ub - lb) / max(abs(ub), GAP_EPS))


def solve_bnb(
    model: MipModel,
    warm: Plan | None = None,
    time_limit: float | None = None,
    *,
    node_limit: int | None = None,
    on_bound=None,
) -> BnbResult:
    """Best-first branch-and-bound on the most fractional binary.

    ``on_bound(lower, upper)`` is called after every node, for tests that
    watch the bound trajectory.
    """
    start = time.perf_counter()
    deadline = INF if time_limit is None else start + time_limit
    inc_plan: Plan | None = None
    inc_ops: dict[int, OperatingPoint] = {}
    ub = INF
    warm_basis = None

    if warm is not None:
        ev = evaluate_plan(model, warm)
        if ev is None:
            raise ValueError("warm plan has no feasible completion")
        ub, inc_ops, warm_basis = ev
        inc_plan = warm

    def finish(status: str, lb: float, nodes: int) -> BnbResult:
        if inc_plan is None and status == BnbStatus.OPTIMAL:
            status = BnbStatus.INFEASIBLE
        lb = min(lb, ub)
        return BnbResult(inc_plan, inc_ops, ub, lb, _gap(ub, lb), nodes, status)

    if time.perf_counter() >= deadline:
        return finish(BnbStatus.TIME_LIMIT, -INF, 0)

    ids = sorted(model.x)
    heap = [_Node(-INF, 0, (), warm_basis)]
    seq = 1
    nodes = 0
    lp = model.lp
    while heap:
        if time.perf_counter() >= deadline or (node_limit is not None and nodes >= node_limit):
            return finish(BnbStatus.TIME_LIMIT, heap[0].bound, nodes)
        node = heapq.heappop(heap)
        if node.bound >= ub - _prune_tol(ub):
            continue
        fixed = dict(node.fixed)
        for k in ids:
            v = model.x[k]
            if k in fixed:
                lp.set_var_bounds(v, float(fixed[k]), float(fixed[k]))
            else:
                lp.set_var_bounds(v, 0.0, 1.0)
        sol = solve_lp(lp, basis=node.basis)
        nodes += 1
        for k in ids:
            lp.set_var_bounds(model.x[k], 0.0, 1.0)
        if sol.status is LpStatus.INFEASIBLE:
            _report(on_bound, heap, ub)
            continue
        if not sol.optimal:
            raise RuntimeError(f"node LP ended with status {sol.status.value}")
        bound = sol.objective
        if bound >= ub - _prune_tol(ub):
            _report(on_bound, heap, ub)
            continue
        xv = {k: float(sol.values[model.x[k]]) for k in ids}
        frac = {k: min(v, 1.0 - v) for k, v in xv.items()}
        branch_k = None
        best = INT_TOL
        for k in ids:
            if frac[k] > best:
                best, branch_k = frac[k], k
        if branch_k is None:
            plan = Plan.of(k for k in ids if xv[k] > 0.5)
            ev = evaluate_plan(model, plan, sol.basis)
            if ev is not None and ev[0] < ub:
                ub, inc_ops, _ = ev
                inc_plan = plan
        else:
            if nodes == 1:
                # rounding-up heuristic at the root
                plan = Plan.of(k for k in ids if xv[k] > INT_TOL)
                ev = evaluate_plan(model, plan, sol.basis)
                if ev is not None and ev[0] < ub:
                    ub, inc_ops, _ = ev
                    inc_plan = plan
            for val in (0, 1):
                heapq.heappush(heap, _Node(bound, seq, node.fixed + ((branch_k, val),), sol.basis))
                seq += 1
        _report(on_bound, heap, ub)
    return finish(BnbStatus.OPTIMAL, ub, nodes)


def _prune_tol(ub: float) -> float:
    return 0.0 if ub == INF else 1e-9 * max(1.0, abs(ub))


def _report(on_bound, heap, ub) -> None:
    if on_bound is not None:
        on_bound(min(heap[0].bound, ub) if heap else ub, ub)


# -- feasibility checker ----------------------------------------------------------

@dataclass
class FeasibilityReport:
    feasible: dict[int, bool]
    max_residual: float

    @property
    def all_feasible(self) -> bool:
        return all(self.feasible.values())


def model2_residual(instance: Instance, plan: Plan, op: OperatingPoint) -> float:
    """Largest violation of the hard-capacity MIP constraints by ``op``."""
    sc = instance.scenario(op.scenario)
    worst = 0.0
    bal = [op.g_bus[b] - sc.demand[b] for b in range(instance.num_buses)]
    for ln in instance.lines:
        built = not ln.is_candidate or ln.id in plan.built
        f = op.f1[ln.id] if ln.is_candidate else op.f0[ln.id]
        bal[ln.from_bus] -= f
        bal[ln.to_bus] += f
        cap = ln.capacity if built else 0.0
        worst = max(worst, abs(f) - cap)
        if built:
            worst = max(worst, abs(f - ln.susceptance * op.delta(ln.from_bus, ln.to_bus)))
    for gen in instance.generators:
        g = op.g[gen.id]
        worst = max(worst, sc.gen_lower[gen.id] - g, g - sc.gen_upper[gen.id])
    worst = max([worst] + [abs(v) for v in bal])
    return max(worst, 0.0)


def check_mip_feasible(
    instance: Instance,
    scenarios: Sequence[int] | None,
    plan: Plan,
    penalty: float | None = None,
) -> FeasibilityReport:
    """Per-scenario: does a zero-slack dispatch exist under ``plan``?"""
    check_plan(instance, plan)
    if scenarios is None:
        scenarios = [sc.id for sc in instance.scenarios]
    feasible = {}
    worst = 0.0
    for s in scenarios:
        m = ScenarioLpModel(instance, s, penalty)
        m.set_built_set(plan)
        try:
            op = m.solve()
        except ScenarioInfeasibleError:
            feasible[s] = False
            worst = INF
            continue
        op_v = violation(op)
        v = op_v if op_v <= FEASIBLE_TOL else m.min_violation()
        feasible[s] = v <= FEASIBLE_TOL
        worst = max(worst, model2_residual(instance, plan, op) if op_v <= FEASIBLE_TOL else v)
    return FeasibilityReport(feasible, worst)
