import json

import pytest

from hybridtep import report as rpt
from hybridtep.cli import RunConfig, main
from hybridtep.instance import load_instance, two_bus_instance, write_instance

from fixtures import DATA

STOCHASTIC_UB_PAIRS = [
    ("wpk3012", 3991188.98, 3804476.14),
    ("rte6495", 3608289.37, 3359504.96),
    ("epigrids7336", 2531068.22, 2211332.94),
    ("cats8870", 3579854.65, 1163055.04),
    ("goc9591", 659750.24, 628147.25),
    ("goc10000", 1226361.64, 1215722.99),
]
STOCHASTIC_GAPS = [-4.68, -6.89, -12.63, -67.51, -4.79, -0.87]

DETERMINISTIC_UB_PAIRS = [
    ("wpk3012", 5704574.53, 5086953.34),
    ("rte6495", 8509416.46, 5107430.70),
    ("epigrids7336", 7822069.98, 3844964.30),
    ("cats8870", 3219262.13, 1934240.67),
    ("goc9591", 8073144.09, 2010012.70),
    ("goc10000", 6434056.77, 2717169.36),
]
DETERMINISTIC_GAPS = [-10.83, -39.98, -50.84, -39.92, -75.10, -57.77]


@pytest.fixture
def t2(tmp_path):
    path = tmp_path / "t2.json"
    write_instance(two_bus_instance(), path)
    return str(path)


def run(tmp_path, *args, name="out.json"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, (json.loads(out.read_text()) if code == 0 and out.exists() else None)


def test_solve_lp_two_bus(tmp_path, t2):
    code, rep = run(tmp_path, "solve-lp", "--instance", t2, "--plan", "1")
    assert code == 0
    assert rep["lp"]["objective"] == pytest.approx(50) and rep["lp"]["violation"] == 0
    assert rep["cost"]["total"] == pytest.approx(60)
    assert rep["config"]["mode"] == "solve-lp" and rep["config"]["it_dr"] == 15
    code, rep = run(tmp_path, "--mode", "solve-lp", "--instance", t2, "--plan", "none", "--lambda", "7")
    assert rep["lp"]["objective"] == pytest.approx(50 + 20 * 7)
    assert rep["violations"] == {"0": pytest.approx(20)}


def test_defaults():
    cfg = RunConfig("ph")
    assert (cfg.it_dr, cfg.it_bs, cfg.eta, cfg.beta) == (15, 15, 0.005, 0.25)
    assert (cfg.omega, cfg.beam_n, cfg.gamma) == (2, 3, 0.5)
    with pytest.raises(ValueError):
        RunConfig("ph", beta=0)
    with pytest.raises(ValueError):
        RunConfig("ph", omega=0)


def test_gen_then_ph_with_zero_limit(tmp_path):
    inst_path = tmp_path / "g6s3.json"
    code = main([
        "gen", "--instance", str(DATA / "g6.m"), "--profiles", str(DATA / "profiles_synthetic.json"),
        "--count", "3", "--start", "0", "--stride", "8", "--out", str(inst_path),
    ])
    assert code == 0
    inst = load_instance(inst_path.read_bytes())
    assert len(inst.scenarios) == 3 and len(inst.candidate_lines) == 12
    code, rep = run(tmp_path, "ph", "--instance", str(inst_path), "--limit", "0")
    assert code == 0
    assert rep["plan"] == list(inst.candidate_ids) and rep["ph"]["iterations"] == 0


def test_exit_codes(tmp_path, t2):
    assert main(["bogus"]) == 2
    assert main(["bnb", "--instance", str(tmp_path / "missing.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["bnb", "--instance", str(bad)]) == 3
    assert main(["dr", "--instance", t2, "--plan", "none"]) == 4
    assert main([
        "gen", "--instance", str(DATA / "g6.m"), "--profiles", str(DATA / "profiles_synthetic.json"),
        "--count", "6", "--start", "5", "--stride", "16",
    ]) == 4
    assert main(["solve-lp", "--instance", t2, "--plan", "9"]) == 3


@pytest.mark.parametrize("mode", ["solve-lp", "bnb", "dr", "bs", "solve"])
def test_modes_on_case_file(tmp_path, mode):
    code, rep = run(tmp_path, mode, "--instance", str(DATA / "g6.m"))
    assert code == 0
    assert rep["cost"]["total"] >= 17288.888888888887 - 1e-6
    assert (tmp_path / "out.json.timing.json").exists()
    if mode == "bnb":
        assert rep["bnb"]["status"] == "optimal" and rep["bnb"]["opt_percent"] == pytest.approx(0, abs=1e-6)


def test_report_from_pairs(tmp_path):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("system,reference,candidate\n" + "".join(f"{s},{a},{b}\n" for s, a, b in STOCHASTIC_UB_PAIRS))
    csv_path = tmp_path / "sum.csv"
    code, doc = run(tmp_path, "report", "--pairs", str(pairs), "--csv", str(csv_path))
    assert code == 0
    assert [r["gap"] for r in doc["rows"]] == STOCHASTIC_GAPS
    assert doc["average"]["gap"] == -16.23
    assert csv_path.read_text().splitlines()[-1].endswith(",-16.23")


def test_report_arithmetic():
    rows = [rpt.Row(*p) for p in DETERMINISTIC_UB_PAIRS]
    assert [round(r.gap, 2) for r in rows] == DETERMINISTIC_GAPS
    assert rpt.average_gap(rows) == pytest.approx(-45.74, abs=0.01)
    assert rpt.average(rows).reference == pytest.approx(6627087.33, abs=0.01)
    assert "-45.74" in rpt.render(rows)
    with pytest.raises(ValueError):
        rpt.gap(1.0, 0.0)


def test_report_pairs_run_reports(tmp_path):
    docs = [
        {"mode": "baseline", "instance": "a", "cost": {"total": 200.0}},
        {"mode": "ph", "instance": "a", "cost": {"total": 150.0}},
        {"mode": "bnb", "instance": "a", "cost": {"total": 1.0}},
    ]
    paths = []
    for i, d in enumerate(docs):
        p = tmp_path / f"r{i}.json"
        p.write_text(json.dumps(d))
        paths.append(str(p))
    code, doc = run(tmp_path, "report", *paths, name="table.json")
    assert code == 0 and doc["rows"][0]["gap"] == -25.0
    with pytest.raises(ValueError):
        rpt.pair_runs(docs[:1])


@pytest.mark.parametrize("mode", ["bs", "ph", "baseline"])
def test_reports_are_byte_identical(tmp_path, mode):
    inst = str(DATA / "g6.m")
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    for d in (a, b):
        assert main([mode, "--instance", inst, "--seed", "5", "--max-iterations", "2", "--out", str(d / "r.json")]) == 0
    assert (a / "r.json").read_bytes() == (b / "r.json").read_bytes()
    assert b"wall_time" not in (a / "r.json").read_bytes()
