import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from pfgrad.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_model_list_and_show(runner):
    res = runner.invoke(main, ["model", "list"])
    assert res.exit_code == 0
    assert "grid5" in res.output
    res = runner.invoke(main, ["model", "show", "grid5"])
    assert res.exit_code == 0
    cfg = json.loads(res.stdout)
    assert cfg["kind"] == "grid" and cfg["states"] == 5


def test_oracle_shape_contract(runner, tmp_path):
    out = tmp_path / "o.csv"
    res = runner.invoke(main, ["oracle", "--model", "grid5", "--theta",
                               "default", "--n", "5", "--seed", "3",
                               "--out", str(out)])
    assert res.exit_code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "n,state,P,Q_1,Q_2,Q_3"
    assert len(lines) == 1 + 6 * 5       # header + (n+1)*S predictor rows


def test_simulate_stdout_and_determinism(runner):
    args = ["simulate", "--model", "grid2", "--n", "6", "--seed", "9"]
    a = runner.invoke(main, args)
    b = runner.invoke(main, args)
    assert a.exit_code == 0 and a.stdout == b.stdout
    assert a.stdout.startswith("n,x,y")
    assert a.stderr.startswith("# pf simulate config:")


def test_seed_is_mandatory(runner):
    res = runner.invoke(main, ["simulate", "--model", "grid2", "--n", "3"])
    assert res.exit_code == 2


def test_unknown_flag_usage_error(runner):
    res = runner.invoke(main, ["oracle", "--model", "grid5", "--wat", "1"])
    assert res.exit_code == 2


def test_run_deterministic_and_dump(runner, tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    dump = tmp_path / "traj.jsonl"
    base = ["run", "--model", "grid5", "--particles", "25", "--n", "8",
            "--seed", "1", "--matrices"]
    r1 = runner.invoke(main, base + ["--out", str(out1), "--dump", str(dump)])
    r2 = runner.invoke(main, base + ["--out", str(out2)])
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert out1.read_bytes() == out2.read_bytes()
    recs = [json.loads(line) for line in dump.read_text().splitlines()]
    assert len(recs) == 9
    assert recs[1]["tau"] is not None
    assert len(recs[0]["states"]) == 25


def test_ratio_study_fixture_outputs(runner, tmp_path):
    out = tmp_path / "r.csv"
    res = runner.invoke(main, ["ratio-study", "--fixture", "two-point",
                               "--k-list", "1,2,5", "--reps", "20000",
                               "--seed", "5", "--out", str(out)])
    assert res.exit_code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "k,bias,bias_se,l2,l2_se,bound_bias,bound_l2"
    assert len(lines) == 4
    assert (tmp_path / "r_ratio.png").exists()


def test_ratio_study_requires_inputs(runner):
    res = runner.invoke(main, ["ratio-study", "--seed", "1"])
    assert res.exit_code == 2


def test_bias_sweep_small(runner, tmp_path):
    out = tmp_path / "b.csv"
    res = runner.invoke(main, [
        "bias-sweep", "--model", "grid5", "--n", "4", "--particles", "8,16",
        "--reps", "200", "--seed", "42", "--threads", "1", "--out", str(out)])
    assert res.exit_code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "N,n,phi,target,exact,mean,bias,bias_se,l2,l2_se,reps"
    assert (tmp_path / "b_slopes.json").exists()
    assert (tmp_path / "b_bias.png").exists()
    # resolved-config header goes to stderr, not into the CSV
    assert "config" not in out.read_text()


def test_bias_sweep_no_figures(runner, tmp_path):
    out = tmp_path / "b.csv"
    res = runner.invoke(main, [
        "bias-sweep", "--model", "grid5", "--n", "3", "--particles", "8",
        "--reps", "100", "--seed", "1", "--threads", "1",
        "--no-figures", "--out", str(out)])
    assert res.exit_code == 0
    assert not (tmp_path / "b_bias.png").exists()


def test_stability_outputs(runner, tmp_path):
    out = tmp_path / "s.csv"
    res = runner.invoke(main, [
        "stability", "--model", "grid5", "--particles", "20", "--n-long",
        "30", "--w-scales", "0,1,10", "--seed", "7", "--out", str(out)])
    assert res.exit_code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scale,n,zeta_norm,tau,a_min"
    assert len(lines) == 1 + 3 * 31
    assert (tmp_path / "s_summary.json").exists()
    assert (tmp_path / "s_stability.png").exists()


def test_uniformity_small(runner, tmp_path):
    out = tmp_path / "u.csv"
    res = runner.invoke(main, [
        "uniformity", "--model", "grid5", "--particles", "10", "--n-long",
        "8", "--times", "4,8", "--reps", "200", "--seed", "3",
        "--threads", "1", "--out", str(out)])
    assert res.exit_code == 0
    assert (tmp_path / "u_summary.json").exists()


def test_mixing_check_ok(runner):
    res = runner.invoke(main, ["mixing-check", "--model", "grid5",
                               "--seed", "1"])
    assert res.exit_code == 0
    payload = json.loads(res.stdout)
    assert payload["ok"] is True
    assert payload["grad_check"]["passed"] is True


def test_rml_demo_small(runner, tmp_path):
    out = tmp_path / "rml.csv"
    res = runner.invoke(main, [
        "rml-demo", "--model", "grid2", "--n-obs", "50", "--particles", "20",
        "--step", "0.05", "--seed", "2", "--out", str(out)])
    assert res.exit_code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "k,theta_1,score_1,projected"
    assert len(lines) == 1 + 52
    assert (tmp_path / "rml_rml.png").exists()


def test_config_file_merging(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model_ref": "grid2", "n": 5, "seed": 9}))
    res = runner.invoke(main, ["simulate", "--config", str(cfg)])
    assert res.exit_code == 0
    direct = runner.invoke(main, ["simulate", "--model", "grid2", "--n", "5",
                                  "--seed", "9"])
    assert res.stdout == direct.stdout
    # explicit flags override the config file
    res2 = runner.invoke(main, ["simulate", "--config", str(cfg),
                                "--seed", "10"])
    assert res2.exit_code == 0 and res2.stdout != res.stdout


def test_stdout_streaming_matches_file(runner, tmp_path):
    out = tmp_path / "o.csv"
    args = ["oracle", "--model", "grid2", "--n", "3", "--seed", "4"]
    file_res = runner.invoke(main, args + ["--out", str(out)])
    stream_res = runner.invoke(main, args + ["--out", "-"])
    assert file_res.exit_code == 0 and stream_res.exit_code == 0
    assert stream_res.stdout == out.read_text()
