"""Benchmark construction from grid case files.

The parser reads the common matrix-sectioned case format (``mpc.bus``,
``mpc.gen``, ``mpc.branch``, ``mpc.gencost``). Only the columns needed for
DC expansion planning are kept.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from typing import Sequence

from .instance import (
    Bus,
    Generator,
    Instance,
    Line,
    LineKind,
    RenewableKind,
    Scenario,
    validate,
    InstanceValidationError,
)

log = logging.getLogger(__name__)

CANDIDATE_COST_PER_REACTANCE = 1e4 / 3.0
PERCENTILE = 0.8


class CaseFormatError(ValueError):
    pass


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class BaseBranch:
    from_bus: int
    to_bus: int
    reactance: float
    rating: float

    @property
    def unrated(self) -> bool:
        return self.rating <= 0


@dataclass(frozen=True)
class BaseGenerator:
    bus: int
    pmin: float
    pmax: float
    cost: float


@dataclass(frozen=True)
class BaseCase:
    """Buses are re-indexed densely in file order; ``bus_ids`` keeps the originals."""

    bus_ids: tuple[int, ...]
    demand: tuple[float, ...]
    branches: tuple[BaseBranch, ...]
    generators: tuple[BaseGenerator, ...]
    name: str = "case"

    @property
    def total_demand(self) -> float:
        return math.fsum(self.demand)

    @property
    def total_capacity(self) -> float:
        return math.fsum(g.pmax for g in self.generators)


@dataclass(frozen=True)
class ScenarioProfile:
    id: int
    solar_ratio: float
    wind_ratio: float
    demand_ratio: float


# -- parsing --------------------------------------------------------------------

_SECTION = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_NAME = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")


def _tables(text: str) -> dict[str, list[tuple[int, list[float]]]]:
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if current is None:
            m = _SECTION.match(line)
            if not m:
                continue
            current = m.group(1)
            tables[current] = []
            line = m.group(2)
        done = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                row = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError:
                raise CaseFormatError(f"line {lineno}: malformed row in mpc.{current}: {chunk!r}") from None
            tables[current].append((lineno, row))
        if done:
            current = None
    if current is not None:
        raise CaseFormatError(f"mpc.{current}: table is never closed")
    return tables


def parse_case(text: str) -> BaseCase:
    tables = _tables(text)
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in tables:
            raise CaseFormatError(f"missing mandatory section mpc.{key}")
    m = None
    for raw in text.splitlines():
        m = _NAME.match(raw)
        if m:
            break
    name = m.group(1) if m else "case"

    def need(table: str, lineno: int, row: list[float], cols: int) -> None:
        if len(row) < cols:
            raise CaseFormatError(f"line {lineno}: mpc.{table} row needs at least {cols} columns, got {len(row)}")

    bus_ids, demand = [], []
    for lineno, row in tables["bus"]:
        need("bus", lineno, row, 3)
        bus_ids.append(int(row[0]))
        demand.append(row[2])
    index = {b: i for i, b in enumerate(bus_ids)}
    if len(index) != len(bus_ids):
        raise CaseFormatError("mpc.bus: duplicate bus numbers")

    def bus(lineno: int, b: float) -> int:
        try:
            return index[int(b)]
        except KeyError:
            raise CaseFormatError(f"line {lineno}: unknown bus {int(b)}") from None

    gencost = tables["gencost"]
    if len(gencost) < len(tables["gen"]):
        raise CaseFormatError("mpc.gencost: fewer rows than mpc.gen")
    gens = []
    for (lineno, row), (cline, crow) in zip(tables["gen"], gencost):
        need("gen", lineno, row, 10)
        if row[7] <= 0:
            continue
        gens.append(BaseGenerator(bus(lineno, row[0]), row[9], row[8], _linear_cost(cline, crow)))

    branches = []
    for lineno, row in tables["branch"]:
        need("branch", lineno, row, 6)
        if len(row) >= 11 and row[10] <= 0:
            continue
        br = BaseBranch(bus(lineno, row[0]), bus(lineno, row[1]), row[3], row[5])
        if br.unrated:
            log.warning("line %d: branch %d-%d has no rating", lineno, int(row[0]), int(row[1]))
        branches.append(br)
    return BaseCase(tuple(bus_ids), tuple(demand), tuple(branches), tuple(gens), name)


def _linear_cost(lineno: int, row: list[float]) -> float:
    if len(row) < 4 or int(row[0]) != 2:
        raise CaseFormatError(f"line {lineno}: only polynomial gencost rows are supported")
    n = int(row[3])
    coefs = row[4:4 + n]
    if len(coefs) != n:
        raise CaseFormatError(f"line {lineno}: gencost declares {n} coefficients, found {len(coefs)}")
    if n >= 3 and any(c != 0 for c in coefs[: n - 2]):
        log.warning("line %d: nonlinear cost terms ignored, keeping the linear coefficient", lineno)
    return coefs[n - 2] if n >= 2 else 0.0


def read_case(path) -> BaseCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


# -- deterministic adaptation ---------------------------------------------------

def _lines(base: BaseCase, unlimited: float) -> tuple[Line, ...]:
    kept = [br for br in base.branches if br.reactance != 0]
    if not kept:
        raise GenerationError("no branch with nonzero reactance remains")
    existing, candidates = [], []
    seen_e: dict[tuple[int, int], int] = {}
    seen_c: dict[tuple[int, int], int] = {}
    for j, br in enumerate(kept):
        pair = (br.from_bus, br.to_bus)
        cap = br.rating if br.rating > 0 else unlimited
        b = 1.0 / br.reactance
        existing.append(Line(j, br.from_bus, br.to_bus, b, cap, LineKind.EXISTING, parallel_index=seen_e.get(pair, 0)))
        seen_e[pair] = seen_e.get(pair, 0) + 1
        for _ in range(2):
            candidates.append(
                Line(
                    len(kept) + len(candidates), br.from_bus, br.to_bus, b, cap, LineKind.CANDIDATE,
                    parallel_index=seen_c.get(pair, 0),
                    invest_cost=CANDIDATE_COST_PER_REACTANCE * abs(br.reactance),
                    twin_existing=j,
                )
            )
            seen_c[pair] = seen_c.get(pair, 0) + 1
    return tuple(existing + candidates)


def _demand(base: BaseCase) -> list[float]:
    out = []
    for b, d in zip(base.bus_ids, base.demand):
        if d < 0:
            log.warning("bus %d: negative demand %g treated as 0", b, d)
        out.append(max(d, 0.0))
    return out


def _finish(instance: Instance) -> Instance:
    diags = validate(instance)
    if diags:
        raise InstanceValidationError(diags)
    return instance


def adapt_deterministic(base: BaseCase, name: str | None = None) -> Instance:
    """Single-scenario instance: two candidates per branch, demand and generation doubled."""
    unlimited = 2.0 * base.total_capacity
    gens = tuple(Generator(i, g.bus, g.cost) for i, g in enumerate(base.generators))
    sc = Scenario(
        0, 1.0,
        tuple(2.0 * d for d in _demand(base)),
        tuple(2.0 * g.pmin for g in base.generators),
        tuple(2.0 * g.pmax for g in base.generators),
    )
    buses = tuple(Bus(i, str(b)) for i, b in enumerate(base.bus_ids))
    return _finish(Instance(buses, gens, _lines(base, unlimited), (sc,), name or base.name))


# -- renewables and scenarios -----------------------------------------------------

def designate_renewables(
    base: BaseCase,
    target_share: float,
    avg_cap: float,
    exclude: Sequence[int] = (),
) -> set[int]:
    """Greedy pick of generators closest to ``avg_cap`` until the share is met."""
    if not 0 <= target_share <= 1:
        raise ValueError(f"target share must lie in [0, 1], got {target_share}")
    total = base.total_capacity
    chosen: set[int] = set()
    got = 0.0
    pool = [i for i, g in enumerate(base.generators) if g.pmax > 0 and i not in set(exclude)]
    while got < target_share * total - 1e-12 * total:
        left = [i for i in pool if i not in chosen]
        if not left:
            raise GenerationError(
                f"renewable target {target_share:.4g} unreachable: only {got / total:.4g} of capacity available"
            )
        pick = min(left, key=lambda i: (abs(base.generators[i].pmax - avg_cap), i))
        chosen.add(pick)
        got += base.generators[pick].pmax
    return chosen


def percentile_index(n: int) -> int:
    """1-based index of the scenario used for the global rescale."""
    return min(max(int(math.floor(PERCENTILE * n + 0.5)), 1), n)


def build_stochastic(
    base: BaseCase,
    profiles: Sequence[ScenarioProfile],
    solar_share: float,
    wind_share: float,
    solar_avg_cap: float,
    wind_avg_cap: float,
    name: str | None = None,
) -> Instance:
    if not profiles:
        raise GenerationError("at least one scenario profile is required")
    d0, g0 = math.fsum(_demand(base)), base.total_capacity
    if d0 <= 0 or g0 <= 0:
        raise GenerationError("base case needs positive total demand and generation capacity")
    solar = designate_renewables(base, solar_share, solar_avg_cap)
    wind = designate_renewables(base, wind_share, wind_avg_cap, exclude=sorted(solar))
    kind = {i: RenewableKind.SOLAR for i in solar} | {i: RenewableKind.WIND for i in wind}
    solar_cap = math.fsum(base.generators[i].pmax for i in solar)
    wind_cap = math.fsum(base.generators[i].pmax for i in wind)

    raw = []
    for prof in profiles:
        upper = []
        for i, g in enumerate(base.generators):
            if i in solar:
                upper.append(g.pmax * prof.solar_ratio * g0 / solar_cap)
            elif i in wind:
                upper.append(g.pmax * prof.wind_ratio * g0 / wind_cap)
            else:
                upper.append(g.pmax)
        scale = prof.demand_ratio * math.fsum(upper) / d0
        raw.append(([d * scale for d in _demand(base)], upper))

    order = sorted(range(len(raw)), key=lambda s: (math.fsum(raw[s][0]), s))
    pivot = order[percentile_index(len(raw)) - 1]
    pivot_demand = math.fsum(raw[pivot][0])
    if pivot_demand <= 0:
        raise GenerationError("percentile scenario has zero demand")
    factor = 2.0 * d0 / pivot_demand

    p = 1.0 / len(raw)
    ng = len(base.generators)
    scenarios = tuple(
        Scenario(s, p, tuple(d * factor for d in dem), (0.0,) * ng, tuple(u * factor for u in up))
        for s, (dem, up) in enumerate(raw)
    )
    gens = tuple(Generator(i, g.bus, g.cost, kind.get(i, RenewableKind.NONE)) for i, g in enumerate(base.generators))
    unlimited = 2.0 * max(math.fsum(sc.gen_upper) for sc in scenarios)
    buses = tuple(Bus(i, str(b)) for i, b in enumerate(base.bus_ids))
    return _finish(Instance(buses, gens, _lines(base, unlimited), scenarios, name or f"{base.name}_stochastic"))


def load_profiles(content: str | bytes) -> list[ScenarioProfile]:
    doc = json.loads(content)
    rows = doc["profiles"] if isinstance(doc, dict) else doc
    out = []
    for i, row in enumerate(rows):
        try:
            prof = ScenarioProfile(int(row.get("id", i)), float(row["solar_ratio"]), float(row["wind_ratio"]), float(row["demand_ratio"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CaseFormatError(f"profiles[{i}]: {exc}") from None
        if min(prof.solar_ratio, prof.wind_ratio, prof.demand_ratio) < 0:
            raise CaseFormatError(f"profiles[{i}]: ratios must be nonnegative")
        out.append(prof)
    return out


def base_shares(base: BaseCase, solar: set[int], wind: set[int]) -> tuple[float, float, float]:
    """(solar share, wind share, demand/generation) of the base case."""
    g0 = base.total_capacity
    return (
        math.fsum(base.generators[i].pmax for i in solar) / g0,
        math.fsum(base.generators[i].pmax for i in wind) / g0,
        math.fsum(_demand(base)) / g0,
    )


# -- screening ------------------------------------------------------------------

def screen(instance: Instance) -> None:
    """Raise unless building every candidate gives a feasible dispatch in every scenario."""
    from .mip import check_mip_feasible

    report = check_mip_feasible(instance, None, instance.all_candidates())
    bad = [s for s, ok in report.feasible.items() if not ok]
    if bad:
        raise GenerationError(f"all-candidates plan infeasible in scenarios {bad}")


def sample_profiles(profiles: Sequence[ScenarioProfile], count: int, start: int = 0, stride: int = 1) -> list[ScenarioProfile]:
    """Every ``stride``-th profile from ``start``, renumbered from 0."""
    picked = list(profiles)[start::stride][:count]
    return [ScenarioProfile(i, p.solar_ratio, p.wind_ratio, p.demand_ratio) for i, p in enumerate(picked)]

