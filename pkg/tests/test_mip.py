import dataclasses
import math
import random

import pytest

from hybridtep.instance import Plan, two_bus_instance
from hybridtep.mip import (
    BnbStatus,
    build_extensive_mip,
    build_ph_subproblem,
    check_mip_feasible,
    evaluate_plan,
    safe_angle_bound,
    solve_bnb,
)

from fixtures import G6_OPTIMAL_PLAN, G6_OPTIMUM, braess_instance, candidate, existing, g6, single, stochastic
from oracles import enumerate_plans


def rel_close(a, b, tol=1e-6):
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_two_bus_mip():
    m = build_extensive_mip(two_bus_instance())
    assert list(m.x) == [1]
    r = solve_bnb(m)
    assert r.status == BnbStatus.OPTIMAL
    assert r.incumbent == Plan.of([1])
    assert r.upper_bound == pytest.approx(60)
    assert r.gap == 0


def test_literal_two_pi_angle_box_cuts_off_the_two_bus_optimum():
    # 25 MW on a unit-susceptance line needs an angle difference of 25 rad
    r = solve_bnb(build_extensive_mip(two_bus_instance(), theta=2 * math.pi))
    assert r.status == BnbStatus.INFEASIBLE
    assert safe_angle_bound(two_bus_instance()) == 60


def test_existing_grid_suffices():
    t2 = two_bus_instance()
    light = dataclasses.replace(t2, scenarios=(dataclasses.replace(t2.scenarios[0], demand=(0.0, 20.0)),))
    r = solve_bnb(build_extensive_mip(light))
    assert r.incumbent == Plan()
    assert r.upper_bound == pytest.approx(20)


def test_subset_probabilities_renormalize():
    inst = stochastic("g6_s3")
    m = build_extensive_mip(inst, [1])
    assert m.probabilities == {1: 1.0}
    with pytest.raises(ValueError):
        build_extensive_mip(inst, [])


def test_g6_matches_frozen_enumeration():
    r = solve_bnb(build_extensive_mip(g6()), time_limit=60)
    assert r.status == BnbStatus.OPTIMAL
    assert rel_close(r.upper_bound, G6_OPTIMUM)
    assert r.incumbent.built == G6_OPTIMAL_PLAN


def random_small(seed):
    rng = random.Random(seed)
    nb = rng.randint(3, 4)
    lines = [existing(j, j, j + 1, rng.choice([1.0, 2.0, 4.0]), rng.choice([10.0, 20.0, 40.0])) for j in range(nb - 1)]
    lines.append(existing(nb - 1, 0, nb - 1, rng.choice([1.0, 2.0]), rng.choice([10.0, 20.0])))
    ne = len(lines)
    cands = [candidate(ne + i, lines[i % ne], rng.choice([5.0, 20.0, 60.0]), parallel_index=1 + i // ne) for i in range(rng.randint(3, 7))]
    gens = [(0, 1.0), (rng.randrange(1, nb), 4.0)]
    demand = [0.0] + [rng.choice([10.0, 25.0, 40.0]) for _ in range(nb - 1)]
    return single(nb, gens, lines + cands, demand, [100.0, rng.choice([0.0, 20.0])], f"rand{seed}")


@pytest.mark.parametrize("seed", range(8))
def test_random_instances_match_enumeration(seed):
    inst = random_small(seed)
    best, _, _ = enumerate_plans(inst)
    r = solve_bnb(build_extensive_mip(inst))
    if best == math.inf:
        assert r.status == BnbStatus.INFEASIBLE
    else:
        assert r.status == BnbStatus.OPTIMAL
        assert rel_close(r.upper_bound, best)


def test_braess_instance_matches_enumeration():
    inst = braess_instance()
    best, plan, seen = enumerate_plans(inst)
    r = solve_bnb(build_extensive_mip(inst))
    assert rel_close(r.upper_bound, best)
    assert r.incumbent.built == plan


def test_bounds_stay_valid_and_warm_start_dominates():
    inst = stochastic("g6_s3")
    m = build_extensive_mip(inst)
    warm = inst.all_candidates()
    warm_cost = evaluate_plan(m, warm)[0]
    reference = solve_bnb(build_extensive_mip(inst)).upper_bound
    trail = []
    r = solve_bnb(m, warm=warm, on_bound=lambda lb, ub: trail.append((lb, ub)))
    assert r.status == BnbStatus.OPTIMAL
    assert rel_close(r.upper_bound, reference)
    for lb, ub in trail:
        assert lb <= reference + 1e-6 * abs(reference)
        assert ub <= warm_cost + 1e-9
    assert r.lower_bound <= r.upper_bound + 1e-6 * abs(r.upper_bound)


def test_zero_time_limit_returns_warm_plan():
    inst = g6()
    m = build_extensive_mip(inst)
    warm = inst.all_candidates()
    r = solve_bnb(m, warm=warm, time_limit=0)
    assert r.status == BnbStatus.TIME_LIMIT
    assert r.incumbent == warm
    assert r.upper_bound == pytest.approx(evaluate_plan(m, warm)[0])


def test_infeasible_warm_plan_is_rejected():
    with pytest.raises(ValueError):
        solve_bnb(build_extensive_mip(two_bus_instance()), warm=Plan())


def test_incumbent_respects_disjunctions():
    inst = stochastic("case5_s3")
    r = solve_bnb(build_extensive_mip(inst), time_limit=60)
    for op in r.operating_points.values():
        for ln in inst.candidate_lines:
            delta = op.delta(ln.from_bus, ln.to_bus)
            if ln.id in r.incumbent.built:
                assert abs(op.f1[ln.id] - ln.susceptance * delta) <= 1e-6
            else:
                assert abs(op.f1[ln.id]) <= 1e-6
        for ln in inst.existing_lines:
            assert abs(op.f0[ln.id]) <= ln.capacity + 1e-6


def test_feasibility_checker():
    t2 = two_bus_instance()
    assert check_mip_feasible(t2, None, Plan.of([1])).feasible == {0: True}
    rep = check_mip_feasible(t2, None, Plan())
    assert rep.feasible == {0: False}
    assert rep.max_residual == pytest.approx(20)
    for key in ("g6_s3", "case9_s4"):
        inst = stochastic(key)
        assert check_mip_feasible(inst, None, inst.all_candidates()).all_feasible


def test_ph_subproblem_objective():
    t2 = two_bus_instance()
    plain = build_extensive_mip(t2, [0])
    same = build_ph_subproblem(t2, 0, {}, {}, {})
    assert (plain.lp.objective == same.lp.objective).all()
    rewarded = build_ph_subproblem(t2, 0, {1: 0.0}, {1: 1.0}, {1: 10.0})
    assert rewarded.x_costs[1] == pytest.approx(10 - 5)
    taxed = build_ph_subproblem(t2, 0, {1: 0.0}, {1: 0.0}, {1: 10.0})
    assert taxed.x_costs[1] == pytest.approx(10 + 5)
    r = solve_bnb(taxed)
    assert r.incumbent == Plan.of([1])
    assert r.upper_bound == pytest.approx(65)
    with pytest.raises(ValueError):
        build_ph_subproblem(t2, 0, {}, {}, {1: -1.0})
