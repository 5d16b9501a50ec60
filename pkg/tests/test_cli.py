import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from causalot.cli import OUT_ENV, REPORT_COLUMNS, run, write_atomic


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(OUT_ENV, raising=False)
    assert run(["tree", "--binomial", "3", "--labels", "sign", "--out", "t3.json"]) == 0
    (tmp_path / "sign.json").write_text(json.dumps({"labels": "sign"}))
    (tmp_path / "terminal.json").write_text(json.dumps({"labels": "terminal"}))
    (tmp_path / "pay.json").write_text(json.dumps({"builtin": "neg_running_max"}))
    (tmp_path / "market.json").write_text(json.dumps({"b_bar": 0.5, "sigma": 1.0}))
    return tmp_path


def load(path):
    return json.loads(path.read_text())


def test_tree_roundtrip(work):
    data = load(work / "t3.json")
    assert data["steps"] == 3
    assert len(data["edges"]) == 14
    assert data["labels"] == [0, 0, 0, 1, 0, 1, 1, 1]


def test_solve_causal_cm(work):
    assert run(["solve", "--treeX", "t3.json", "--filtG", "sign.json", "--cost", "cm", "--coupling", "--out", "r/s.json"]) == 0
    out = load(work / "r/s.json")
    assert out["value"] == pytest.approx(1.5, abs=1e-10)
    assert out["duality_gap"] <= 1e-8
    assert out["certificate_residual"] <= 1e-8
    assert out["pass"] is True
    assert sum(w for _, _, w in out["coupling"]) == pytest.approx(1.0)


def test_solve_bicausal_and_filtration_file(work):
    from causalot.pathspace import build_binomial, enlarge_progressive, last_zero_time, natural_filtration

    t = build_binomial(3, 1.0)
    G = enlarge_progressive(natural_filtration(t), last_zero_time(t))
    (work / "g.json").write_text(json.dumps(G.to_json()))
    assert run(["solve", "--mode", "bicausal", "--treeX", "t3.json", "--filtG", "g.json", "--out", "b.json"]) == 0
    (work / "tau.json").write_text(json.dumps({"tau": "last_zero"}))
    assert run(["solve", "--mode", "bicausal", "--treeX", "t3.json", "--filtG", "tau.json", "--out", "b2.json"]) == 0
    assert load(work / "b.json")["value"] == pytest.approx(load(work / "b2.json")["value"])


def test_info_commands(work):
    (work / "half.json").write_text(json.dumps({"probs": [0.5, 0.5]}))
    assert run(["info", "entropy", "--labels", "half.json", "--out", "e.json"]) == 0
    assert load(work / "e.json")["value"] == pytest.approx(0.6931471805599453, abs=1e-15)
    assert run(["info", "kl", "--tree", "t3.json", "--labels", "sign.json", "--out", "k.json"]) == 0
    assert load(work / "k.json")["gap"] <= 1e-12
    assert run(["info", "drift-energy", "--tree", "t3.json", "--labels", "terminal.json", "--out", "d.json"]) == 0
    assert run(["info", "sweep", "--nmin", "2", "--nmax", "4", "--out", "sw.json"]) == 0
    rows = load(work / "sw.json")["rows"]
    assert [r["N"] for r in rows] == [2, 3, 4]
    assert rows[0]["drift_energy"] == pytest.approx(5 / 12)


def test_mc_bridge(work):
    assert run(["mc", "bridge", "--paths", "5000", "--seed", "3", "--out", "m.json"]) == 0
    out = load(work / "m.json")
    assert out["target"] == pytest.approx(0.5 * np.log(10))
    assert out["stderr"] > 0


def test_stopping_and_utility(work):
    assert run(["stopping", "value", "--tree", "t3.json", "--payoff", "pay.json", "--out", "sv.json"]) == 0
    assert load(work / "sv.json")["value"] == pytest.approx(-1 / np.sqrt(3))
    assert run(["stopping", "bound", "--tree", "t3.json", "--filt", "sign.json", "--payoff", "pay.json", "--out", "sb.json"]) == 0
    assert run(["stopping", "sensitivity", "--tree", "t3.json", "--payoff", "pay.json", "--out", "ss.json"]) == 0
    assert run(["utility", "value", "--tree", "t3.json", "--market", "market.json", "--out", "uv.json"]) == 0
    assert run(["utility", "bound", "--tree", "t3.json", "--filt", "sign.json", "--market", "market.json", "--out", "ub.json"]) == 0
    assert load(work / "ub.json")["pass"] is True
    assert run(["utility", "entropy-compare", "--tree", "t3.json", "--market", "market.json", "--out", "ue.json"]) == 0


def test_exit_codes(work, capsys):
    assert run(["solve", "--treeX", "missing.json"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["tree"]) == 1
    assert run(["mc", "bridge", "--paths", "10"]) == 1
    (work / "bad_market.json").write_text(json.dumps({"sigma": 5.0}))
    assert run(["utility", "value", "--tree", "t3.json", "--market", "bad_market.json"]) == 1
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(work, monkeypatch):
    # a four-point grid is far too coarse for the quadratic-variation gate
    assert run(["mc", "progressive", "--paths", "1000", "--grid", "4", "--eps", "0.01", "--out", "p.json"]) == 2
    assert load(work / "p.json")["pass"] is False

    from causalot import cli
    from causalot.simplex import SolverError

    def broken(*args, **kwargs):
        raise SolverError("basis lost")

    monkeypatch.setattr(cli, "solve_causal", broken)
    assert run(["solve", "--treeX", "t3.json", "--filtG", "sign.json"]) == 2


def test_config_overrides_flags(work):
    (work / "cfg.json").write_text(json.dumps({"binomial": 2, "out": "from_cfg.json"}))
    assert run(["--config", "cfg.json", "tree", "--binomial", "5"]) == 0
    assert load(work / "from_cfg.json")["steps"] == 2
    (work / "badcfg.json").write_text(json.dumps({"nonsense": 1}))
    assert run(["--config", "badcfg.json", "tree", "--binomial", "2"]) == 1


def test_env_output_directory(work, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(work / "envout"))
    assert run(["tree", "--binomial", "2"]) == 0
    assert (work / "envout" / "tree.json").exists()


def test_report_deterministic_and_skips_malformed(work, caplog):
    res = work / "res"
    res.mkdir()
    run(["stopping", "value", "--tree", "t3.json", "--payoff", "pay.json", "--out", "res/a.json"])
    run(["info", "sweep", "--nmin", "2", "--nmax", "3", "--out", "res/b.json"])
    (res / "c.json").write_text("{not json")
    (res / "d.json").write_text("[1, 2]")
    shutil.copy(work / "market.json", res / "e.json")  # an input, not a result
    assert run(["report", "res", "--out", "rep1.csv"]) == 0
    assert run(["report", "res", "--out", "rep2.csv"]) == 0
    assert (work / "rep1.csv").read_bytes() == (work / "rep2.csv").read_bytes()
    rows = list(csv.DictReader((work / "rep1.csv").open()))
    assert list(rows[0].keys()) == REPORT_COLUMNS
    assert [r["name"] for r in rows] == ["stopping-value", "sign-sweep", "sign-sweep"]
    assert "skipping c.json" in caplog.text
    assert (work / "rep1-sign-sweep.dat").exists()


def test_write_atomic_leaves_no_temp(tmp_path):
    target = tmp_path / "sub" / "x.txt"
    write_atomic(target, "hello")
    write_atomic(target, "again")
    assert target.read_text() == "again"
    assert [p.name for p in target.parent.iterdir()] == ["x.txt"]


def test_console_script(tmp_path):
    exe = shutil.which("causalot")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "tree", "--binomial", "2", "--out", str(tmp_path / "t.json")],
                         capture_output=True, text=True)
    assert out.returncode == 0
    bad = subprocess.run([exe, "solve", "--treeX", str(tmp_path / "nope.json")], capture_output=True, text=True)
    assert bad.returncode == 1
