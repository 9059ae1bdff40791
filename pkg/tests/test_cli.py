import json
import subprocess
import sys

import pytest

from radpuc.cli import main
from radpuc.config import RunConfig
from radpuc.driver import run_radp
from radpuc.model import build_uncertainty_set, load_case


def _gen(tmp_path, seed=3, T=2, name="case.json"):
    path = tmp_path / name
    assert main(["gen", "--seed", str(seed), "--T", str(T), "--out", str(path)]) == 0
    return path


def _report(out):
    data = json.loads((out / "report.json").read_text())
    data["config"].pop("output_dir")
    return data


def test_gen_is_deterministic_and_valid(tmp_path):
    a = _gen(tmp_path, name="a.json")
    b = _gen(tmp_path, name="b.json")
    assert a.read_bytes() == b.read_bytes()
    assert _gen(tmp_path, seed=4, name="c.json").read_bytes() != a.read_bytes()
    case = load_case(a)
    rep = run_radp(case, build_uncertainty_set(case, 0.0), RunConfig(scale=0.0))
    # generated cases are deterministically feasible without slack
    assert rep.objective < case.penalty()


def test_solve_is_reproducible(tmp_path):
    case = _gen(tmp_path)
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["solve", str(case), "--mode", "radp", "--out", str(o)]) == 0
    assert _report(outs[0]) == _report(outs[1])
    assert (outs[0] / "cuts.json").read_bytes() == (outs[1] / "cuts.json").read_bytes()
    lines = (outs[0] / "trace.csv").read_text().splitlines()
    assert lines[0] == "outer,inner,lower,upper,gap,seconds" and len(lines) > 1


def test_zero_width_modes_agree(tmp_path):
    case = _gen(tmp_path, seed=5, T=3)
    cfg = tmp_path / "zero.toml"
    cfg.write_text("scale = 0.0\n")
    objs = []
    for mode in ("radp", "rfr"):
        out = tmp_path / mode
        assert main(["solve", str(case), str(cfg), "--mode", mode, "--out", str(out)]) == 0
        objs.append(_report(out)["objective"])
    assert objs[0] == pytest.approx(objs[1], rel=1e-6)


def test_oracle_matches_rddp_and_cap_exit(tmp_path):
    case = _gen(tmp_path)
    out = tmp_path / "rddp"
    assert main(["solve", str(case), "--mode", "rddp", "--out", str(out)]) == 0
    res = tmp_path / "oracle.json"
    assert main(["oracle", str(case), str(out / "report.json"), "--out", str(res)]) == 0
    rep = _report(out)
    orc = json.loads(res.read_text())
    assert orc["oracle_dispatch"] == pytest.approx(rep["lower"], rel=1e-6)
    assert main(["oracle", str(case), str(out / "report.json"), "--cap", "1"]) == 2


def test_simulate_round_trip(tmp_path):
    case = _gen(tmp_path)
    for mode in ("radp", "rfr"):
        out = tmp_path / mode
        assert main(["solve", str(case), "--mode", mode, "--out", str(out)]) == 0
        csvs = []
        for k in range(2):
            p = tmp_path / f"{mode}{k}.csv"
            assert main(["simulate", str(case), str(out / "report.json"), "--paths", "20", "--seed", "1",
                         "--out", str(p)]) == 0
            csvs.append(p.read_bytes())
        assert csvs[0] == csvs[1]
        rows = csvs[0].decode().splitlines()
        assert rows[0] == "seed,path,cost,slack_count" and len(rows) == 23
        assert rows[-2].split(",")[-1] == "0"


def test_input_errors_exit_one(tmp_path):
    assert main(["solve", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["solve", str(bad)]) == 1
    case = _gen(tmp_path)
    cfg = tmp_path / "bad.toml"
    cfg.write_text("epsilon = -1.0\n")
    assert main(["solve", str(case), str(cfg)]) == 1
    cfg.write_text("unknown_key = 1\n")
    assert main(["solve", str(case), str(cfg)]) == 1
    assert main(["simulate", str(case), str(tmp_path / "none.json")]) == 1


def test_iteration_cap_exits_two(tmp_path):
    case = _gen(tmp_path, seed=2, T=3)
    cfg = tmp_path / "cap.toml"
    cfg.write_text('mode = "rddp"\nmax_inner = 1\n')
    assert main(["solve", str(case), str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "radpuc", "gen", "--seed", "1", "--T", "2"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["horizon"]["T"] == 2
