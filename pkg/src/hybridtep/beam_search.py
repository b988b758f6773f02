"""Beam search over feasible plans by removing subsets of built candidates.

Anything with ``evaluate(plan) -> (cost, violation)``, ``invest_costs``,
``penalty`` and ``instance`` can be searched, which is how the tests drive
the search with scripted costs.
"""
from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .destroy_repair import InfeasibleStartError
from .instance import Plan

RANDOM_PERM = "random_perm"
COST_DESC = "cost_desc"
STRATEGIES = (RANDOM_PERM, COST_DESC)
ZERO_VIOLATION = 1e-9


class Evaluator(Protocol):
    penalty: float
    invest_costs: Mapping[int, float]

    def evaluate(self, plan: Plan) -> tuple[float, float]: ...


@dataclass
class BeamNode:
    id: int
    inserted: frozenset[int]
    ub: float
    cost: float
    excluded: frozenset[int] = frozenset()
    parent: int | None = None
    subset: frozenset[int] = frozenset()
    z: float = 0.0
    accepted: bool = True
    strategy: str = RANDOM_PERM
    level: int = 0

    def record(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "level": self.level,
            "strategy": self.strategy,
            "removed": sorted(self.subset),
            "z": self.z,
            "ub": self.ub,
            "accepted": self.accepted,
            "inserted": len(self.inserted),
        }


@dataclass
class BeamParams:
    it_bs: int = 15
    eta: float = 0.005
    omega: int = 2
    beam_n: int = 3
    gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.it_bs < 1 or self.omega < 1 or self.beam_n < 1:
            raise ValueError("it_bs, omega and beam_n must be at least 1")
        if self.gamma < 0 or not self.eta > 0:
            raise ValueError("gamma must be >= 0 and eta > 0")


@dataclass
class BeamTree:
    nodes: list[BeamNode] = field(default_factory=list)

    def add(self, **kw) -> BeamNode:
        node = BeamNode(id=len(self.nodes), **kw)
        self.nodes.append(node)
        return node

    def records(self) -> list[dict]:
        return [n.record() for n in self.nodes]


def subset_size(inserted: int, candidates: int, buses: int, eta: float) -> int:
    if candidates == 0:
        raise ValueError("no candidate lines")
    raw = eta * (inserted / candidates) * (buses / 1000.0)
    return max(int(math.floor(raw + 0.5)), 1)


def partition(
    node: BeamNode,
    strategy: str,
    size: int,
    rng: random.Random,
    invest_costs: Mapping[int, float],
) -> list[tuple[frozenset[int], float]]:
    if size < 1:
        raise ValueError("subset size must be at least 1")
    if strategy == RANDOM_PERM:
        lines = sorted(node.inserted)
        rng.shuffle(lines)
    elif strategy == COST_DESC:
        lines = sorted(node.inserted - node.excluded, key=lambda k: (-invest_costs[k], k))
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    out = []
    for i in range(0, len(lines), size):
        chunk = frozenset(lines[i:i + size])
        out.append((chunk, math.fsum(invest_costs[k] for k in sorted(chunk))))
    return out


def branch(
    node: BeamNode,
    subsets: Sequence[tuple[Iterable[int], float]],
    evaluator: Evaluator,
    omega: int,
    *,
    strategy: str = RANDOM_PERM,
    tree: BeamTree | None = None,
) -> list[BeamNode]:
    """Children from removing the ``omega`` largest-Z subsets.

    Equal Z keeps the order of ``subsets``. A removal that is infeasible or
    raises the cost above the node's cost is undone: the child keeps the
    node's lines and is penalized through its ub.
    """
    if tree is None:
        tree = BeamTree([None] * (node.id + 1))  # type: ignore[list-item]
    order = sorted(range(len(subsets)), key=lambda i: -subsets[i][1])[:omega]
    children = []
    for i in order:
        subset, z = frozenset(subsets[i][0]), subsets[i][1]
        plan = node.inserted - subset
        cost, v = evaluator.evaluate(Plan(plan))
        common = dict(parent=node.id, subset=subset, z=z, strategy=strategy, level=node.level + 1)
        if v > ZERO_VIOLATION:
            ub = node.cost + evaluator.penalty * v
            child = tree.add(inserted=node.inserted, ub=ub, cost=node.cost, accepted=False,
                             excluded=_exclude(node, subset, strategy), **common)
        elif cost > node.cost:
            child = tree.add(inserted=node.inserted, ub=cost, cost=node.cost, accepted=False,
                             excluded=_exclude(node, subset, strategy), **common)
        else:
            child = tree.add(inserted=plan, ub=cost, cost=cost, excluded=node.excluded, **common)
        children.append(child)
    return children


def _exclude(node: BeamNode, subset: frozenset[int], strategy: str) -> frozenset[int]:
    return node.excluded | subset if strategy == COST_DESC else node.excluded


def select_nodes(level: Sequence[BeamNode], n: int, gamma: float, rng: random.Random) -> list[BeamNode]:
    if len(level) <= n:
        return list(level)
    pool = sorted(level, key=lambda b: (b.ub, b.id))[: int(math.floor((1 + gamma) * n))]
    return sorted(rng.sample(pool, n), key=lambda b: b.id)


@dataclass
class BeamResult:
    plan: Plan
    cost: float
    tree: BeamTree
    levels: int


def beam_search(
    evaluator: Evaluator,
    start: Plan,
    params: BeamParams | None = None,
    tl: float | None = None,
) -> BeamResult:
    params = params or BeamParams()
    deadline = math.inf if tl is None else time.perf_counter() + tl
    rng = random.Random(params.seed)
    inst = evaluator.instance
    n_cand, n_bus = len(inst.candidate_ids), inst.num_buses

    if hasattr(evaluator, "basis"):
        # a cold start keeps the tree reproducible whatever was solved before
        evaluator.basis = None
    cost0, v0 = evaluator.evaluate(start)
    if v0 > ZERO_VIOLATION:
        raise InfeasibleStartError(f"start plan has violation {v0:.6g}")
    tree = BeamTree()
    best = tree.add(inserted=frozenset(start.built), ub=cost0, cost=cost0)
    levels = 0
    for strategy in STRATEGIES:
        root = best if strategy == RANDOM_PERM else tree.add(
            inserted=best.inserted, ub=best.cost, cost=best.cost, parent=best.id,
            strategy=strategy, level=best.level,
        )
        level = [root]
        stale = 0
        while level and stale < params.it_bs and time.perf_counter() < deadline:
            children: list[BeamNode] = []
            for node in select_nodes(level, params.beam_n, params.gamma, rng):
                if time.perf_counter() >= deadline:
                    break
                size = subset_size(len(node.inserted), n_cand, n_bus, params.eta)
                subsets = partition(node, strategy, size, rng, evaluator.invest_costs)
                children += branch(node, subsets, evaluator, params.omega, strategy=strategy, tree=tree)
            levels += 1
            improved = False
            for child in children:
                if child.accepted and child.cost < best.cost:
                    best, improved = child, True
            stale = 0 if improved else stale + 1
            level = children
    return BeamResult(Plan(best.inserted), best.cost, tree, levels)
