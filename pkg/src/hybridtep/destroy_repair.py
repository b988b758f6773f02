"""Destroy-and-repair: drop lightly loaded candidates, reinsert where needed.

``rt`` is the fraction of the entry set ``I`` proposed for removal and
moves like a binary search: up by half the step after an improvement, down
otherwise, with the step halving every iteration.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable

from .instance import Instance, Plan
from .scenario_lp import OperatingPoint, ScenarioInfeasibleError, ScenarioLpModel, violation

log = logging.getLogger(__name__)

ZERO_VIOLATION = 1e-9
SLACK_TOL = 1e-9


class InfeasibleStartError(ValueError):
    pass


@dataclass(frozen=True)
class DrStep:
    iteration: int
    rt: float
    dt: float
    proposed: int
    removed: int
    violation: float
    cost: float
    improved: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def residual(op: OperatingPoint, line) -> float:
    return (line.capacity - abs(op.f1.get(line.id, 0.0))) / line.capacity


def removal_count(rt: float, n: int) -> int:
    if rt <= 0 or n == 0:
        return 0
    return min(n, max(1, int(math.floor(rt * n + 0.5))))


def select_by_residual(op: OperatingPoint, pool: Iterable[int], rt: float, instance: Instance) -> set[int]:
    """The ``rt`` share of ``pool`` with the largest residual flows (ties: lowest id)."""
    lines = instance.line_by_id
    ids = sorted(pool)
    ranked = sorted(ids, key=lambda k: (-residual(op, lines[k]), k))
    return set(ranked[: removal_count(rt, len(ids))])


def _watched_lines(instance: Instance) -> dict[int, list[int]]:
    """Existing lines whose overload justifies reinserting each candidate."""
    out = {}
    for ln in instance.candidate_lines:
        if ln.twin_existing is not None:
            out[ln.id] = [ln.twin_existing]
        else:
            ends = {ln.from_bus, ln.to_bus}
            out[ln.id] = sorted(j.id for j in instance.existing_lines if {j.from_bus, j.to_bus} == ends)
    return out


def select_with_violation(op: OperatingPoint | None, rm: Iterable[int], watched: dict[int, list[int]]) -> set[int]:
    if op is None:
        return set()
    return {k for k in rm if any(op.y0[j] > SLACK_TOL for j in watched[k])}


def _solve(model: ScenarioLpModel, built: Iterable[int]) -> tuple[OperatingPoint | None, float]:
    model.set_built_set(Plan.of(built))
    try:
        op = model.solve()
    except ScenarioInfeasibleError:
        return None, math.inf
    return op, violation(op)


def repair(
    rm: set[int],
    model: ScenarioLpModel,
    v: float,
    op: OperatingPoint | None = None,
) -> tuple[set[int], float, OperatingPoint | None]:
    """Reinsert removed lines whose twin existing line is overloaded.

    The model must currently be solved with ``rm`` removed; ``op`` defaults
    to its last solution. Returns the reduced ``rm``, its violation and the
    last solution computed (the model's built set matches that solution).
    """
    if op is None:
        op = model.last
    watched = _watched_lines(model.instance)
    rm = set(rm)
    ri = select_with_violation(op, rm, watched) if v > ZERO_VIOLATION else set()
    while ri and v > ZERO_VIOLATION:
        new_op, new_v = _solve(model, model.active | ri)
        op = new_op
        if new_v < v:
            rm -= ri
            v = new_v
            ri = select_with_violation(op, rm, watched)
        else:
            break
    return rm, v, op


def destroy_and_repair(
    model: ScenarioLpModel,
    inserted: Plan,
    it_dr: int = 15,
    tl: float | None = None,
    trace: list[DrStep] | None = None,
) -> tuple[Plan, set[int]]:
    """Return ``(I', R')`` with ``I' = I minus rm`` and ``R' = rm``."""
    if it_dr < 1:
        raise ValueError("it_dr must be at least 1")
    deadline = math.inf if tl is None else time.perf_counter() + tl
    instance = model.instance
    entry = set(inserted.built)
    rt, dt = 0.5, 0.5
    rm: set[int] = set()

    model.basis = None
    op, v = _solve(model, entry)
    if v > ZERO_VIOLATION:
        raise InfeasibleStartError(f"entry plan has violation {v:.6g} on scenario {model.scenario}")
    c = model.cost(op, Plan.of(entry))
    selected = select_by_residual(op, entry, rt, instance)
    trial = (entry - model.active) | selected
    previous_len: int | None = None
    it = 0
    while True:
        if it >= it_dr or time.perf_counter() >= deadline or not trial or len(trial) == previous_len:
            break
        it += 1
        step_rt, step_dt = rt, dt
        previous_len = len(trial)
        op, v = _solve(model, entry - trial)
        if v > ZERO_VIOLATION:
            trial, v, op = repair(trial, model, v, op)
        improved = False
        c_new = math.nan
        if v <= ZERO_VIOLATION:
            c_new = model.cost(op, model.plan)
            if c_new < c:
                improved = True
                rm = set(trial)
                c = c_new
                rt += 0.5 * dt
        if not improved:
            rt -= 0.5 * dt
            op, _ = _solve(model, entry)
        dt /= 2.0
        step = DrStep(it, step_rt, step_dt, previous_len, len(trial), v, c_new, improved)
        if trace is not None:
            trace.append(step)
        log.debug("dr %s", step.to_json())
        selected = select_by_residual(op, entry, rt, instance)
        trial = (entry - model.active) | selected
    model.set_built_set(Plan.of(entry - rm))
    return Plan.of(entry - rm), set(rm)
