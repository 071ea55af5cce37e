import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from treatrisk import NuisanceLearners, estimate_cate_cvar
from treatrisk.cli import main, read_table, write_table
from treatrisk.simlab import DgpSpec, generate


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sample.csv"
    assert main(["generate", "--n", "2000", "--seed", "3", "--output", str(path)]) == 0
    return path


def _curve(path):
    with open(path / "curve.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _report(path):
    with open(path / "report.json") as fh:
        return json.load(fh)


def test_round_trip_reproduces_estimates(tmp_path):
    s = generate(DgpSpec(n=500, seed=2))
    path = tmp_path / "s.csv"
    write_table(s.table, path)
    back = read_table(str(path))
    assert back.fingerprint() == s.table.fingerprint()
    a = estimate_cate_cvar(s.table, 0.3, seed=1)
    b = estimate_cate_cvar(back, 0.3, seed=1)
    assert a.psi_hat == b.psi_hat and a.se == b.se


def test_estimate_writes_monotone_curve(sample_csv, tmp_path):
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(sample_csv), "--output", str(out)]) == 0
    rows = _curve(out)
    assert len(rows) == 10
    vals = [float(r["psi_hat"]) for r in rows]
    assert vals == sorted(vals)
    rep = _report(out)
    assert rep["schema_version"] == 1 and rep["seed"] == 0
    assert rep["config"]["folds"] == 5 and rep["config"]["gamma"] == 0.9
    assert {"alpha", "psi_hat", "se", "ci_lo", "ci_hi", "variant"} <= set(rep["results"][0])


def test_estimate_diff_variant(sample_csv, tmp_path):
    out = tmp_path / "diff"
    assert main(["estimate", "--input", str(sample_csv), "--output", str(out),
                 "--variant", "diff", "--alpha-hi", "1", "--alpha-grid", "0.1,0.5,1"]) == 0
    rows = _curve(out)
    assert [r["variant"] for r in rows] == ["diff"] * 3
    assert float(rows[-1]["psi_hat"]) == 0.0 and float(rows[-1]["se"]) == 0.0
    assert float(rows[0]["psi_hat"]) < 0


def test_estimate_interquantile_and_guard(sample_csv, tmp_path):
    out = tmp_path / "iq"
    assert main(["estimate", "--input", str(sample_csv), "--output", str(out),
                 "--variant", "interquantile", "--alpha-hi", "0.75",
                 "--alpha-grid", "0.001,0.25,0.75"]) == 0
    rep = _report(out)
    assert [r["alpha"] for r in rep["results"]] == [0.25]
    assert {s["alpha"] for s in rep["skipped"]} == {0.001, 0.75}
    assert "alpha too small" in rep["skipped"][0]["reason"]


def test_bounds_curves(sample_csv, tmp_path):
    out = tmp_path / "bnd"
    assert main(["bounds", "--input", str(sample_csv), "--output", str(out), "--b", "0",
                 "--rho=-1,0,1", "--alpha-grid", "0.2,0.5,0.8"]) == 0
    rows = _curve(out)
    by = {}
    for r in rows:
        by.setdefault(r["variant"], []).append(float(r["psi_hat"]))
    up = np.array(by["upper"])
    np.testing.assert_allclose(by["lb_shift(b=0)"], up, atol=1e-12)
    np.testing.assert_allclose(by["lb_mixture(b=0)"], up, atol=1e-12)
    r_neg, r_zero = np.array(by["lb_variance(rho=-1)"]), np.array(by["lb_variance(rho=0)"])
    assert np.all(r_neg <= r_zero) and np.all(r_zero <= np.array(by["lb_variance(rho=1)"]) + 0.05)
    assert np.all(r_neg <= up)


def test_bounds_requires_assumption(sample_csv, tmp_path):
    assert main(["bounds", "--input", str(sample_csv), "--output", str(tmp_path)]) == 2


def test_empty_and_malformed_inputs(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["estimate", "--input", str(empty), "--output", str(tmp_path / "o")]) == 2
    assert "no rows" in capsys.readouterr().err
    header_only = tmp_path / "h.csv"
    header_only.write_text("x_1,a,y\n")
    assert main(["estimate", "--input", str(header_only), "--output", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x_1,a,y\n0.1,1,2.0\n0.2,0,oops\n")
    assert main(["estimate", "--input", str(bad), "--output", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err
    missing = tmp_path / "m.csv"
    missing.write_text("x_1,a,y\n0.1,1,\n")
    assert main(["estimate", "--input", str(missing), "--output", str(tmp_path / "o")]) == 2
    treat = tmp_path / "t.csv"
    treat.write_text("x_1,a,y\n0.1,2,1.0\n")
    assert main(["estimate", "--input", str(treat), "--output", str(tmp_path / "o")]) == 2
    assert "column 'a'" in capsys.readouterr().err
    nocol = tmp_path / "n.csv"
    nocol.write_text("x_1,y\n0.1,1.0\n")
    assert main(["estimate", "--input", str(nocol), "--output", str(tmp_path / "o")]) == 2


def test_config_file_and_overrides(sample_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha_grid": [0.3, 0.6], "folds": 4, "gamma": 0.8}))
    out = tmp_path / "o"
    assert main(["estimate", "--config", str(cfg), "--input", str(sample_csv),
                 "--output", str(out), "--gamma", "0.95"]) == 0
    rep = _report(out)
    assert rep["config"]["folds"] == 4 and rep["config"]["gamma"] == 0.95
    assert [r["alpha"] for r in rep["results"]] == [0.3, 0.6]
    cfg.write_text(json.dumps({"folds": 4, "colour": "red"}))
    assert main(["estimate", "--config", str(cfg), "--input", str(sample_csv),
                 "--output", str(out)]) == 2


@pytest.mark.parametrize("flags", [["--alpha-grid", "0.5,0.2"], ["--alpha-grid", "0,0.5"],
                                   ["--learner", "lasso"], ["--propensity", "high"],
                                   ["--folds", "1"]])
def test_bad_flags_exit_2(sample_csv, tmp_path, flags):
    assert main(["estimate", "--input", str(sample_csv), "--output", str(tmp_path)] + flags) == 2


def test_learner_options(sample_csv, tmp_path):
    for flags in (["--learner", "ridge:1", "--cate", "dr", "--outcome", "arms"],
                  ["--learner", "knn:20+std", "--propensity", "fit"],
                  ["--cate", "r", "--fold-mode", "literal", "--no-rearrange"]):
        out = tmp_path / "_".join(flags).replace(":", "").replace("+", "")
        assert main(["estimate", "--input", str(sample_csv), "--output", str(out),
                     "--alpha-grid", "0.3,1"] + flags) == 0


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"reps": 20, "dgp": {"n": 800},
                               "experiment": {"nuisance": "wrong_tau", "alpha": 0.25}}))
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
    lines = (tmp_path / "a" / "replications.jsonl").read_text().splitlines()
    assert len(lines) == 20
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    sa["config"].pop("output"), sb["config"].pop("output")
    assert sa == sb
    assert sa["validity_fraction"] >= 0.9
    assert {"coverage", "mean_bias", "median_width", "failures"} <= set(sa)


def test_simulate_rejects_bad_dgp(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"dgp": {"kind": "bogus"}}))
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path)]) == 2
    cfg.write_text(json.dumps({"dgp": {"rho": 3}}))
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path)]) == 2
    cfg.write_text(json.dumps({"experiment": {"variant": "x"}}))
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path)]) == 2


def test_module_entry_point(sample_csv, tmp_path):
    res = subprocess.run([sys.executable, "-m", "treatrisk", "estimate", "--input",
                          str(sample_csv), "--output", str(tmp_path), "--alpha-grid", "0.5"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "report.json").exists()
    assert not list(tmp_path.glob(".tmp-*"))
