import logging
import math

import pytest

from hybridtep.instance import RenewableKind, validate
from hybridtep.instance_gen import (
    BaseCase,
    BaseGenerator,
    CaseFormatError,
    GenerationError,
    ScenarioProfile,
    adapt_deterministic,
    base_shares,
    build_stochastic,
    designate_renewables,
    load_profiles,
    parse_case,
    percentile_index,
    sample_profiles,
    screen,
)
from hybridtep.mip import check_mip_feasible

from fixtures import STOCHASTIC, base_case, g6, profiles, stochastic

TWO_BUS = """function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	0	0	1	100	1	80	5;
];
mpc.branch = [
	1	2	0.01	0.3	0	40	40	40	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	2	12	0;
];
"""


def test_parse_minimal_case():
    base = parse_case(TWO_BUS)
    assert base.name == "tiny"
    assert base.bus_ids == (1, 2) and base.demand == (0.0, 50.0)
    assert len(base.branches) == 1 and len(base.generators) == 1
    assert base.branches[0].reactance == 0.3 and base.branches[0].rating == 40
    assert base.generators[0] == BaseGenerator(0, 5.0, 80.0, 12.0)


def test_parse_errors():
    with pytest.raises(CaseFormatError, match="mpc.gencost"):
        parse_case(TWO_BUS.split("mpc.gencost")[0])
    bad = TWO_BUS.replace("0.01\t0.3", "0.01\tx0.3")
    with pytest.raises(CaseFormatError, match=r"line 11"):
        parse_case(bad)
    with pytest.raises(CaseFormatError, match="columns"):
        parse_case(TWO_BUS.replace("1\t2\t0.01\t0.3\t0\t40\t40\t40\t0\t0\t1\t-360\t360", "1\t2\t0.01"))
    with pytest.raises(CaseFormatError, match="unknown bus"):
        parse_case(TWO_BUS.replace("\t1\t2\t0.01", "\t1\t7\t0.01"))
    with pytest.raises(CaseFormatError, match="polynomial"):
        parse_case(TWO_BUS.replace("2\t0\t0\t2\t12\t0;", "1\t0\t0\t2\t0\t0\t80\t900;"))


def test_rating_zero_and_quadratic_cost_warn(caplog):
    text = TWO_BUS.replace("0.3\t0\t40", "0.3\t0\t0").replace("2\t0\t0\t2\t12\t0;", "2\t0\t0\t3\t0.5\t12\t0;")
    with caplog.at_level(logging.WARNING):
        base = parse_case(text)
    assert base.branches[0].unrated
    assert base.generators[0].cost == 12.0
    messages = " ".join(r.getMessage() for r in caplog.records)
    assert "no rating" in messages and "nonlinear" in messages
    inst = adapt_deterministic(base)
    # unrated lines get twice the total capacity
    assert all(ln.capacity == 2 * 80 for ln in inst.lines)


def test_adapt_deterministic_two_bus():
    inst = adapt_deterministic(parse_case(TWO_BUS))
    assert len(inst.existing_lines) == 1 and len(inst.candidate_lines) == 2
    for ln in inst.candidate_lines:
        assert ln.invest_cost == pytest.approx(1000.0)
        assert ln.susceptance == pytest.approx(1 / 0.3) and ln.twin_existing == 0
    sc = inst.scenarios[0]
    assert sc.probability == 1.0 and sc.demand == (0.0, 100.0)
    assert sc.gen_lower == (10.0,) and sc.gen_upper == (160.0,)
    assert validate(inst) == []


def test_zero_reactance_branches_dropped():
    text = TWO_BUS.replace(
        "mpc.gencost", "mpc.extra = [\n\t1 2 3;\n];\nmpc.gencost"
    ).replace("-360\t360;\n];", "-360\t360;\n\t1\t2\t0\t0\t0\t40\t40\t40\t0\t0\t1\t-360\t360;\n];")
    base = parse_case(text)
    assert len(base.branches) == 2
    inst = adapt_deterministic(base)
    assert len(inst.existing_lines) == 1 and len(inst.candidate_lines) == 2
    only_zero = TWO_BUS.replace("0.01\t0.3", "0.01\t0")
    with pytest.raises(GenerationError):
        adapt_deterministic(parse_case(only_zero))


def test_negative_demand_clamped(caplog):
    with caplog.at_level(logging.WARNING):
        inst = adapt_deterministic(parse_case(TWO_BUS.replace("\t2\t1\t50", "\t2\t1\t-5")))
    assert inst.scenarios[0].demand == (0.0, 0.0)
    assert "negative demand" in caplog.text


def test_g6_candidate_count_and_costs():
    base = base_case("g6")
    inst = g6()
    assert len(inst.candidate_lines) == 2 * len(base.branches) == 12
    costs = sorted(round(ln.invest_cost) for ln in inst.candidate_lines)
    assert costs == [667] * 4 + [1000] * 4 + [1333] * 2 + [2000] * 2


def _gens(*caps):
    return BaseCase((1,), (10.0,), (), tuple(BaseGenerator(1, 0.0, c, 1.0) for c in caps))


def test_designate_renewables():
    base = _gens(100, 50, 10)
    assert designate_renewables(base, 0.0, 45) == set()
    assert designate_renewables(base, 0.3, 45) == {1}
    assert designate_renewables(base, 1.0, 45) == {0, 1, 2}
    assert designate_renewables(_gens(40, 50), 0.1, 45) == {0}
    with pytest.raises(GenerationError, match="unreachable"):
        designate_renewables(base, 0.9, 45, exclude=[0])
    with pytest.raises(ValueError):
        designate_renewables(base, 1.5, 45)
    assert designate_renewables(_gens(0, 50), 0.5, 0) == {1}


def test_percentile_index():
    assert percentile_index(10) == 8
    assert percentile_index(1) == 1
    assert percentile_index(96) == 77
    assert percentile_index(3) == 2


def test_shipped_profiles():
    profs = profiles()
    assert len(profs) == 96
    inst = build_stochastic(base_case("g6"), profs, 0.2, 0.2, 100, 100)
    assert len(inst.scenarios) == 96
    assert all(sc.probability == pytest.approx(1 / 96) for sc in inst.scenarios)
    assert math.fsum(sc.probability for sc in inst.scenarios) == pytest.approx(1.0)


def test_fixed_point_matches_deterministic_adaptation():
    base = base_case("g6")
    avg = base.total_capacity / len(base.generators)
    # only the designation matters here
    inst = build_stochastic(base, [ScenarioProfile(0, 1, 1, 1)], 0.2, 0.2, avg, avg)
    solar = {g.id for g in inst.generators if g.renewable_kind is RenewableKind.SOLAR}
    wind = {g.id for g in inst.generators if g.renewable_kind is RenewableKind.WIND}
    s_share, w_share, d_ratio = base_shares(base, solar, wind)
    inst = build_stochastic(base, [ScenarioProfile(0, s_share, w_share, d_ratio)], 0.2, 0.2, avg, avg)
    det = adapt_deterministic(base)
    sc, ref = inst.scenarios[0], det.scenarios[0]
    assert sc.demand == pytest.approx(ref.demand, rel=1e-12)
    assert sc.gen_upper == pytest.approx(ref.gen_upper, rel=1e-12)
    assert sc.gen_lower == (0.0,) * len(ref.gen_lower)
    assert [ln.invest_cost for ln in inst.lines] == [ln.invest_cost for ln in det.lines]


@pytest.mark.parametrize("key", sorted(STOCHASTIC))
def test_generated_fixtures_screen_and_rescale(key):
    case = STOCHASTIC[key][0]
    base = base_case(case)
    inst = stochastic(key)
    assert validate(inst) == []
    assert len(inst.candidate_lines) == 2 * len(base.branches)
    totals = sorted(math.fsum(sc.demand) for sc in inst.scenarios)
    pivot = totals[percentile_index(len(totals)) - 1]
    assert pivot == pytest.approx(2 * base.total_demand, rel=1e-6)
    assert check_mip_feasible(inst, None, inst.all_candidates()).all_feasible
    screen(inst)


def test_screen_rejects_overloaded_instance():
    case, start, count, stride = "g6", 5, 6, 16
    base = base_case(case)
    avg = base.total_capacity / len(base.generators)
    inst = build_stochastic(base, sample_profiles(profiles(), count, start, stride), 0.2, 0.2, avg, avg)
    with pytest.raises(GenerationError, match="infeasible"):
        screen(inst)


def test_stochastic_errors():
    base = base_case("g6")
    with pytest.raises(GenerationError):
        build_stochastic(base, [], 0.2, 0.2, 100, 100)
    empty = BaseCase((1,), (0.0,), base.branches[:0], base.generators)
    with pytest.raises(GenerationError):
        build_stochastic(empty, profiles()[:2], 0.2, 0.2, 100, 100)


def test_load_profiles_forms():
    rows = '[{"solar_ratio": 0.1, "wind_ratio": 0.2, "demand_ratio": 0.5}]'
    assert load_profiles(rows) == [ScenarioProfile(0, 0.1, 0.2, 0.5)]
    assert load_profiles('{"profiles": ' + rows + "}") == load_profiles(rows)
    with pytest.raises(CaseFormatError):
        load_profiles('[{"solar_ratio": -1, "wind_ratio": 0, "demand_ratio": 1}]')
    with pytest.raises(CaseFormatError):
        load_profiles('[{"solar_ratio": 1}]')
    picked = sample_profiles(profiles(), 3, 2, 10)
    assert [p.id for p in picked] == [0, 1, 2]
    assert picked[1].demand_ratio == profiles()[12].demand_ratio
