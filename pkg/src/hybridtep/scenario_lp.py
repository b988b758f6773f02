"""Per-scenario DC-OPF with penalized capacity slacks.

Candidate lines are switched on and off purely through variable bounds:
each candidate ``k`` has a flow ``f1[k]`` and an auxiliary ``r[k]`` in its
voltage-law row ``f1 - B*(theta_from - theta_to) - r = 0``.  A built line has
``r`` fixed to zero (the law holds); an unbuilt line has ``f1`` fixed to zero
and ``r`` free (the row is inert).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .instance import Instance, Plan, check_plan, default_penalty
from .lp import INF, LinearProgram, LpStatus, solve_lp


class ScenarioInfeasibleError(Exception):
    """The slack-relaxed LP has no solution (e.g. demand above capacity)."""


@dataclass
class OperatingPoint:
    scenario: int
    f0: dict[int, float]
    f1: dict[int, float]
    y0: dict[int, float]
    y1: dict[int, float]
    g: tuple[float, ...]
    g_bus: tuple[float, ...]
    theta: tuple[float, ...]
    objective: float

    def delta(self, from_bus: int, to_bus: int) -> float:
        return self.theta[from_bus] - self.theta[to_bus]


def reference_buses(instance: Instance) -> list[int]:
    """Lowest-id bus of every connected component (all lines count)."""
    parent = list(range(instance.num_buses))

    def find(b: int) -> int:
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        return b

    for ln in instance.lines:
        ra, rb = find(ln.from_bus), find(ln.to_bus)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return sorted({find(b) for b in range(instance.num_buses)})


class ScenarioLpModel:
    """LP of one scenario with a toggleable set of active candidates.

    ``invest_costs`` defaults to the instance investment costs; callers that
    price candidates differently (the PH subproblems) may override it.
    """

    def __init__(
        self,
        instance: Instance,
        scenario: int,
        penalty: float | None = None,
        *,
        backend: str = "simplex",
        invest_costs: Mapping[int, float] | None = None,
    ):
        if penalty is None:
            penalty = default_penalty(instance)
        if not penalty > 0:
            raise ValueError(f"penalty must be positive, got {penalty}")
        sc = instance.scenario(scenario)
        self.instance = instance
        self.scenario = scenario
        self.penalty = float(penalty)
        self.backend = backend
        self.invest_costs = dict(invest_costs) if invest_costs is not None else {
            ln.id: ln.invest_cost for ln in instance.candidate_lines
        }
        self.basis = None
        self.last: OperatingPoint | None = None

        lp = LinearProgram()
        lam = self.penalty
        self.f0 = {ln.id: lp.add_var(-INF, INF, 0.0, f"f0_{ln.id}") for ln in instance.existing_lines}
        self.f1 = {ln.id: lp.add_var(-INF, INF, 0.0, f"f1_{ln.id}") for ln in instance.candidate_lines}
        self.y0 = {ln.id: lp.add_var(0.0, INF, lam, f"y0_{ln.id}") for ln in instance.existing_lines}
        self.y1 = {ln.id: lp.add_var(0.0, INF, lam, f"y1_{ln.id}") for ln in instance.candidate_lines}
        self.g = [
            lp.add_var(sc.gen_lower[gen.id], sc.gen_upper[gen.id], gen.cost, f"g_{gen.id}")
            for gen in sorted(instance.generators, key=lambda g: g.id)
        ]
        self.g_bus = [lp.add_var(-INF, INF, 0.0, f"gbus_{b}") for b in range(instance.num_buses)]
        refs = set(reference_buses(instance))
        self.theta = [
            lp.add_var(0.0, 0.0, 0.0, f"theta_{b}") if b in refs else lp.add_var(-INF, INF, 0.0, f"theta_{b}")
            for b in range(instance.num_buses)
        ]
        self.r = {ln.id: lp.add_var(0.0, 0.0, 0.0, f"r_{ln.id}") for ln in instance.candidate_lines}

        balance: list[dict[int, float]] = [{self.g_bus[b]: 1.0} for b in range(instance.num_buses)]
        for ln in instance.lines:
            var = self.f1[ln.id] if ln.is_candidate else self.f0[ln.id]
            balance[ln.from_bus][var] = balance[ln.from_bus].get(var, 0.0) - 1.0
            balance[ln.to_bus][var] = balance[ln.to_bus].get(var, 0.0) + 1.0
        self.kcl_rows = [
            lp.add_row(balance[b], sc.demand[b], sc.demand[b], f"kcl_{b}") for b in range(instance.num_buses)
        ]
        for ln in instance.existing_lines:
            lp.add_row(self._kvl(ln, self.f0[ln.id]), 0.0, 0.0, f"kvl0_{ln.id}")
        for ln in instance.candidate_lines:
            row = self._kvl(ln, self.f1[ln.id])
            row.append((self.r[ln.id], -1.0))
            lp.add_row(row, 0.0, 0.0, f"kvl1_{ln.id}")
        for ln in instance.existing_lines:
            f, y = self.f0[ln.id], self.y0[ln.id]
            lp.add_row([(f, 1.0), (y, -1.0)], -INF, ln.capacity, f"cap0p_{ln.id}")
            lp.add_row([(f, -1.0), (y, -1.0)], -INF, ln.capacity, f"cap0n_{ln.id}")
        for ln in instance.candidate_lines:
            f, y = self.f1[ln.id], self.y1[ln.id]
            lp.add_row([(f, 1.0), (y, -1.0)], -INF, ln.capacity, f"cap1p_{ln.id}")
            lp.add_row([(f, -1.0), (y, -1.0)], -INF, ln.capacity, f"cap1n_{ln.id}")
        for b in range(instance.num_buses):
            row = [(self.g_bus[b], 1.0)]
            row += [(self.g[gen.id], -1.0) for gen in instance.generators if gen.bus == b]
            lp.add_row(row, 0.0, 0.0, f"gbus_{b}")
        self.lp = lp
        self.active: frozenset[int] = frozenset(self.f1)

    def _kvl(self, ln, flow_var: int) -> list[tuple[int, float]]:
        b = ln.susceptance
        return [(flow_var, 1.0), (self.theta[ln.from_bus], -b), (self.theta[ln.to_bus], b)]

    def set_built_set(self, plan: Plan) -> None:
        check_plan(self.instance, plan)
        for k in self.f1:
            if k in plan.built:
                self.lp.set_var_bounds(self.f1[k], -INF, INF)
                self.lp.set_var_bounds(self.r[k], 0.0, 0.0)
            else:
                self.lp.set_var_bounds(self.f1[k], 0.0, 0.0)
                self.lp.set_var_bounds(self.r[k], -INF, INF)
        self.active = frozenset(plan.built)

    @property
    def plan(self) -> Plan:
        return Plan(self.active)

    def solve(self) -> OperatingPoint:
        sol = solve_lp(self.lp, basis=self.basis, backend=self.backend)
        if sol.status is LpStatus.INFEASIBLE:
            self.basis = None
            raise ScenarioInfeasibleError(
                f"scenario {self.scenario}: no dispatch even with capacity slacks"
            )
        if not sol.optimal:
            self.basis = None
            raise ScenarioInfeasibleError(f"scenario {self.scenario}: LP status {sol.status.value}")
        self.basis = sol.basis
        v = sol.values
        op = OperatingPoint(
            scenario=self.scenario,
            f0={j: float(v[i]) for j, i in self.f0.items()},
            f1={k: float(v[i]) for k, i in self.f1.items()},
            y0={j: float(v[i]) for j, i in self.y0.items()},
            y1={k: float(v[i]) for k, i in self.y1.items()},
            g=tuple(float(v[i]) for i in self.g),
            g_bus=tuple(float(v[i]) for i in self.g_bus),
            theta=tuple(float(v[i]) for i in self.theta),
            objective=sol.objective,
        )
        self.last = op
        return op

    def min_violation(self) -> float:
        """Smallest total slack achievable under the current built set.

        Generation costs are zeroed for the solve, so the answer does not
        depend on how large the penalty is relative to dispatch costs.
        """
        saved = [(i, self.lp.cost(i)) for i in self.g]
        for i, _ in saved:
            self.lp.set_cost(i, 0.0)
        try:
            sol = solve_lp(self.lp, basis=self.basis, backend=self.backend)
        finally:
            for i, c in saved:
                self.lp.set_cost(i, c)
        if not sol.optimal:
            return math.inf
        return sol.objective / self.penalty

    def evaluate(self, plan: Plan) -> tuple[float, float]:
        """Solve under ``plan``; return (cost incl. investment, violation).

        A plan whose LP has no solution at all is reported with infinite
        violation.
        """
        self.set_built_set(plan)
        try:
            op = self.solve()
        except ScenarioInfeasibleError:
            return math.inf, math.inf
        return self.cost(op, plan), violation(op)

    def cost(self, op: OperatingPoint, plan: Plan) -> float:
        return generation_cost(op, self.instance) + sum(self.invest_costs[k] for k in sorted(plan.built))


def build_scenario_lp(instance: Instance, s: int, penalty: float | None = None, **kw) -> ScenarioLpModel:
    return ScenarioLpModel(instance, s, penalty, **kw)


def set_built_set(model: ScenarioLpModel, built: Plan) -> None:
    model.set_built_set(built)


def solve(model: ScenarioLpModel) -> OperatingPoint:
    return model.solve()


def violation(op: OperatingPoint) -> float:
    return math.fsum(op.y0.values()) + math.fsum(op.y1.values())


def generation_cost(op: OperatingPoint, instance: Instance) -> float:
    return math.fsum(gen.cost * op.g[gen.id] for gen in instance.generators)


def cost(op: OperatingPoint, plan: Plan, instance: Instance) -> float:
    from .instance import plan_investment_cost

    return generation_cost(op, instance) + plan_investment_cost(instance, plan)


def residual_flows(op: OperatingPoint, plan: Plan, instance: Instance) -> dict[int, float]:
    """(capacity - |flow|) / capacity for every built candidate."""
    lines = instance.line_by_id
    return {k: (lines[k].capacity - abs(op.f1[k])) / lines[k].capacity for k in sorted(plan.built)}


def kcl_residual(op: OperatingPoint, instance: Instance) -> float:
    """Largest bus balance mismatch of ``op``."""
    sc = instance.scenario(op.scenario)
    bal = np.array(op.g_bus, dtype=float) - np.array(sc.demand, dtype=float)
    for ln in instance.lines:
        f = op.f1[ln.id] if ln.is_candidate else op.f0[ln.id]
        bal[ln.from_bus] -= f
        bal[ln.to_bus] += f
    return float(np.max(np.abs(bal))) if len(bal) else 0.0


def kvl_residual(op: OperatingPoint, instance: Instance, plan: Plan) -> float:
    """Largest voltage-law mismatch over existing and built candidate lines."""
    worst = 0.0
    for ln in instance.lines:
        if ln.is_candidate and ln.id not in plan.built:
            continue
        f = op.f1[ln.id] if ln.is_candidate else op.f0[ln.id]
        worst = max(worst, abs(f - ln.susceptance * op.delta(ln.from_bus, ln.to_bus)))
    return worst
