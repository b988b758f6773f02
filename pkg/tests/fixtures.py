"""Small hand-made instances shared by several test modules."""
from hybridtep.instance import Bus, Generator, Instance, Line, LineKind, Scenario


def existing(j, a, b, susceptance, capacity):
    return Line(j, a, b, susceptance, capacity, LineKind.EXISTING)


def candidate(k, twin, cost, parallel_index=1):
    return Line(
        k, twin.from_bus, twin.to_bus, twin.susceptance, twin.capacity, LineKind.CANDIDATE,
        parallel_index=parallel_index, invest_cost=cost, twin_existing=twin.id,
    )


def single(buses, gens, lines, demand, upper, name="fixture"):
    return Instance(
        tuple(Bus(b) for b in range(buses)),
        tuple(Generator(i, bus, cost) for i, (bus, cost) in enumerate(gens)),
        tuple(lines),
        (Scenario(0, 1.0, tuple(demand), (0.0,) * len(gens), tuple(upper)),),
        name,
    )


def braess_instance():
    """Building line 3 raises the dispatch cost from 210 to 250."""
    lines = [
        existing(0, 0, 1, 5.0, 20.0),
        existing(1, 1, 2, 5.0, 50.0),
        existing(2, 0, 2, 5.0, 20.0),
        Line(3, 0, 2, 5.0, 10.0, LineKind.CANDIDATE, parallel_index=1, invest_cost=1.0),
    ]
    return single(3, [(0, 1.0), (1, 5.0)], lines, [0.0, 0.0, 50.0], [100.0, 100.0], "braess")


def three_bus_spare():
    """Path 0-1-2 where line 0-1 has a costly twin that is never needed."""
    j0, j1 = existing(0, 0, 1, 1.0, 100.0), existing(1, 1, 2, 1.0, 30.0)
    lines = [j0, j1, candidate(2, j0, 7.0), candidate(3, j1, 5.0)]
    return single(3, [(0, 1.0)], lines, [0.0, 0.0, 50.0], [100.0], "spare")


# -- generated fixtures -----------------------------------------------------------

import functools
import json
from importlib import resources

from hybridtep.instance_gen import adapt_deterministic, build_stochastic, load_profiles, parse_case, sample_profiles

DATA = resources.files("hybridtep") / "data"

# expansion optimum of G6, computed by oracles.enumerate_plans over all 4096 plans
G6_OPTIMUM = 17288.888888888887
G6_OPTIMAL_PLAN = frozenset({12, 13})


@functools.lru_cache(maxsize=None)
def base_case(name):
    return parse_case((DATA / f"{name}.m").read_text())


@functools.lru_cache(maxsize=None)
def g6():
    return adapt_deterministic(base_case("g6"))


@functools.lru_cache(maxsize=None)
def profiles():
    return tuple(load_profiles((DATA / "profiles_synthetic.json").read_text()))


STOCHASTIC = {
    "g6_s3": ("g6", 0, 3, 8),
    "g6_s4": ("g6", 2, 4, 23),
    "case5_s3": ("case5", 0, 3, 8),
    "case5_s6": ("case5", 5, 6, 16),
    "case9_s4": ("case9", 2, 4, 23),
}


# extensive-form optima, computed by oracles.enumerate_plans (case9_s4 has 18
# candidates and is only solved by branch-and-bound)
STOCHASTIC_OPTIMA = {
    "g6_s3": 19441.988362850774,
    "g6_s4": 17655.268603782755,
    "case5_s3": 21587.730700069507,
    "case5_s6": 20287.11158458103,
}


@functools.lru_cache(maxsize=None)
def stochastic(key):
    case, start, count, stride = STOCHASTIC[key]
    base = base_case(case)
    avg = base.total_capacity / len(base.generators)
    return build_stochastic(base, sample_profiles(profiles(), count, start, stride), 0.2, 0.2, avg, avg, name=key)


def parallel_bundle(count, cost, capacity=1000.0):
    """Two buses, a strong existing line and ``count`` twin candidates."""
    j0 = existing(0, 0, 1, 1.0, capacity)
    lines = [j0] + [candidate(1 + i, j0, cost, parallel_index=i) for i in range(count)]
    return single(2, [(0, 1.0)], lines, [0.0, 50.0], [100.0], f"bundle{count}")
