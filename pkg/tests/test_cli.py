import csv
import json
import math

import numpy as np
import pytest

from stochbt.cli import main
from stochbt.system import StochasticSystem, random_stable_system, save_system


@pytest.fixture
def files(tmp_path, scalar_noisy):
    save_system(scalar_noisy, tmp_path / "scalar.json")
    save_system(random_stable_system(3, 4, q=2), tmp_path / "r4.json")
    save_system(StochasticSystem.create([[0.5]], B=[[1.0]], C=[[1.0]]), tmp_path / "unstable.json")
    return tmp_path


def test_analyze_scalar(files, capsys):
    out = files / "a"
    assert main(["analyze", "--system", str(files / "scalar.json"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "hsv_theta.csv")))
    assert rows[0] == ["index", "theta"]
    assert rows[1][0] == "1" and float(rows[1][1]) == pytest.approx(4 / 7, abs=1e-6)
    rep = json.loads((out / "analysis.json").read_text())
    assert rep["stable"] and rep["version"].startswith("stochbt")
    assert "tolerances" in rep


def test_unstable_exit_3(files, capsys):
    code = main(["analyze", "--system", str(files / "unstable.json"), "--out", str(files / "u")])
    assert code == 3
    assert "spectral abscissa" in capsys.readouterr().err


def test_missing_file_exit_2(files):
    assert main(["analyze", "--system", str(files / "nope.json")]) == 2


def test_invalid_system_exit_2(files):
    obj = json.loads((files / "scalar.json").read_text())
    obj["B"] = [[1.0], [2.0]]
    (files / "bad.json").write_text(json.dumps(obj))
    assert main(["analyze", "--system", str(files / "bad.json"), "--out", str(files / "b")]) == 2


def test_bad_order_exit_2(files):
    args = ["reduce", "--system", str(files / "r4.json"), "--r", "9", "--out", str(files / "x")]
    assert main(args) == 2


def test_reduce_approach1_formula(files):
    out = files / "r1"
    args = ["reduce", "--system", str(files / "r4.json"), "--strategy", "approach1", "--r", "2",
            "--aux", "scalar", "--alpha", "1.0", "--gammas", "0.3,0.2", "--gamma-tilde", "2.0",
            "--out", str(out)]
    assert main(args) == 0
    rep = json.loads((out / "bound.json").read_text())
    p, t = rep["parameters"], rep["terms"]
    by_hand = 2 * math.sqrt(p["gamma_tilde"]) * sum(t["sigma_tilde"][p["r"]:]) * math.sqrt(
        p["u_l2norm"] ** 2 + t["u0_energy"] * p["v_2norm"] ** 2)
    assert rep["total"] == pytest.approx(by_hand, rel=1e-12)
    assert (out / "reduced_system.json").exists()


def test_reduce_approach1_full_order_zero(files):
    out = files / "r1full"
    args = ["reduce", "--system", str(files / "r4.json"), "--strategy", "approach1", "--r", "4",
            "--out", str(out)]
    assert main(args) == 0
    assert json.loads((out / "bound.json").read_text())["total"] == 0.0


def test_reduce_approach2_scalar_full_order(files):
    out = files / "r2"
    args = ["reduce", "--system", str(files / "scalar.json"), "--r", "1", "--r-init", "1",
            "--out", str(out)]
    assert main(args) == 0
    red = json.loads((out / "reduced_control.json").read_text())
    # scalar balancing is a rescaling, so A and N are unchanged
    assert red["A"][0][0] == pytest.approx(-1.0)
    assert red["N"][0][0][0] == pytest.approx(0.5)


def test_config_file_and_override(files):
    cfg = {"system": "r4.json", "strategy": "approach2", "r": 2, "n_traj": 50, "T": 0.5,
           "dt": 0.01, "seed": 9, "control": {"kind": "sine", "amplitude": [1.0], "omega": 2.0}}
    (files / "cfg.json").write_text(json.dumps(cfg))
    out = files / "v"
    assert main(["verify", "--config", str(files / "cfg.json"), "--seed", "11", "--out", str(out)]) == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["master_seed"] == 11
    assert set(verdict["verdicts"]) == {"bound", "energy_estimate", "ito_lemma"}


def test_unknown_config_key(files):
    (files / "cfg.json").write_text(json.dumps({"system": "r4.json", "bogus": 1}))
    assert main(["analyze", "--config", str(files / "cfg.json")]) == 2


def test_verify_deterministic(files):
    common = ["verify", "--system", str(files / "r4.json"), "--r", "2", "--traj", "100",
              "--T", "0.5", "--dt", "0.01", "--seed", "5"]
    assert main(common + ["--out", str(files / "v1")]) == 0
    assert main(common + ["--out", str(files / "v2")]) == 0
    assert (files / "v1" / "verdict.json").read_bytes() == (files / "v2" / "verdict.json").read_bytes()


def test_verify_full_order_pass(files):
    out = files / "vf"
    args = ["verify", "--system", str(files / "r4.json"), "--r", "4", "--r-init", "4",
            "--traj", "100", "--T", "0.5", "--dt", "0.01", "--out", str(out)]
    assert main(args) == 0
    assert json.loads((out / "verdict.json").read_text())["verdict"] == "PASS"


def test_simulate_csv(files):
    out = files / "s"
    args = ["simulate", "--system", str(files / "scalar.json"), "--traj", "30", "--T", "0.5",
            "--dt", "0.05", "--out", str(out)]
    assert main(args) == 0
    rows = list(csv.reader(open(out / "trajectory_summary.csv")))
    assert rows[0] == ["t", "mean_y_1", "var_y_1"]
    assert len(rows) == 11
    assert float(rows[1][1]) == pytest.approx(1.0)
