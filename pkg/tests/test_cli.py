import json
import math

import numpy as np
import pytest

from gibbs_ldp.cli import run
from gibbs_ldp.config import parse_config
from gibbs_ldp.diagnostics import stirling_log_prob
from gibbs_ldp.errors import ConstraintViolated, IntensityAssumptionViolated, TypeMismatch, UnknownKey


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")


def test_stirling_command(tmp_path):
    assert run(["stirling", "--n-ladder", "10,100,1000", "--lambda", "1", "--out", str(tmp_path)]) == 0
    data = read_csv(tmp_path / "stirling.csv")
    for n, v in zip(data["n"], data["estimate"]):
        assert v == stirling_log_prob(int(n))[1]
    side = json.loads((tmp_path / "stirling.csv.json").read_text())
    assert {"config_hash", "seed", "wall_time_s", "versions"} <= set(side)
    assert (tmp_path / "stirling.png").stat().st_size > 0
    assert "window.ladder = 10,100,1000" in (tmp_path / "config.resolved").read_text()


def test_no_plot_flag(tmp_path):
    assert run(["stirling", "--no-plot", "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "stirling.png").exists()


def test_coupling_verify_example(tmp_path):
    argv = ["coupling-verify", "--model", "strauss", "--gamma", "0.5", "--r", "0.5", "--n", "64", "--b", "auto",
            "--eps", "0.1", "--trials", "1000", "--seed", "7", "--out", str(tmp_path)]
    assert run(argv) == 0
    report = json.loads((tmp_path / "coupling_verify_report.json").read_text())
    assert report["total_violations"] == 0
    assert report["b"] == report["K_r"] + 1 == 81


def test_coupling_verify_with_planted_cluster(tmp_path):
    argv = ["coupling-verify", "--model", "kwise", "--k", "3", "--r", "0.1", "--n", "100", "--plant", "6",
            "--trials", "200", "--score", "clique", "--out", str(tmp_path)]
    assert run(argv) == 0
    report = json.loads((tmp_path / "coupling_verify_report.json").read_text())
    assert report["total_violations"] == 0 and report["N_r"] >= 6


def test_hardcore_intensity_rejected(tmp_path, capsys):
    argv = ["free-energy", "--model", "hardcore", "--R", "0.9", "--lambda", "1", "--d", "2", "--n", "2",
            "--out", str(tmp_path)]
    assert run(argv) == 1
    assert "intensity" in capsys.readouterr().err


def test_exit_codes(tmp_path):
    out = str(tmp_path)
    assert run(["free-energy", "--out", out]) == 1  # model.kind missing
    assert run(["free-energy", "--model", "strauss", "--bogus", "1", "--out", out]) == 1
    assert run(["tail", "--model", "ideal", "--n", "16", "--threshold", "-1", "--samples", "200",
                "--out", out]) == 2
    assert run(["dense-check", "--model", "strauss", "--r", "0.1", "--n", "100", "--trials", "20",
                "--out", out]) == 0
    assert run(["boundary-check", "--model", "strauss", "--n", "100", "--trials", "50", "--out", out]) == 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# demo\nmodel.kind = strauss\nscore.r = 0.3\nwindow.n = 32\n")
    cfg = parse_config(cfg_file, {"score.r": "0.5"})
    assert cfg["score.r"] == 0.5 and cfg["window.n"] == 32
    assert "score.r = 0.5" in cfg.echo()
    assert parse_config(cfg_file)["score.r"] == 0.3


def test_config_errors(tmp_path):
    with pytest.raises(ConstraintViolated):
        parse_config(None, {})
    with pytest.raises(ConstraintViolated, match="gamma"):
        parse_config(None, {"model.kind": "strauss", "model.gamma": "1.5"})
    with pytest.raises(UnknownKey):
        parse_config(None, {"model.kind": "strauss", "model.colour": "red"})
    with pytest.raises(TypeMismatch):
        parse_config(None, {"model.kind": "strauss", "window.n": "many"})
    with pytest.raises(ConstraintViolated):
        parse_config(None, {"model.kind": "strauss", "model.r": "3", "window.n": "16"})
    with pytest.raises(IntensityAssumptionViolated):
        parse_config(None, {"model.kind": "hardcore", "model.R": "0.6"})


def test_flag_r_sets_both_radii_unless_score_r_given():
    from gibbs_ldp.cli import resolve

    _, cfg = resolve(["tail", "--model", "strauss", "--r", "0.4"])
    assert cfg["model.r"] == cfg["score.r"] == 0.4
    _, cfg = resolve(["tail", "--model", "strauss", "--r", "0.4", "--score-r", "0.2"])
    assert (cfg["model.r"], cfg["score.r"]) == (0.4, 0.2)


@pytest.mark.parametrize("argv,name", [
    (["free-energy", "--model", "strauss", "--n", "2", "--method", "naive", "--samples", "20000"], "free_energy.csv"),
    (["free-energy", "--model", "strauss", "--n", "16", "--mcmc-samples", "20", "--burn-in", "5",
      "--beta-nodes", "5", "--replicas", "4"], "free_energy.csv"),
    (["sample", "--model", "strauss", "--n", "16", "--mcmc-samples", "3", "--burn-in", "5"], "sample_0002.csv"),
])
def test_outputs_identical_across_thread_counts(tmp_path, monkeypatch, argv, name):
    blobs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("GIBBS_LDP_THREADS", threads)
        out = tmp_path / threads
        assert run(argv + ["--seed", "11", "--out", str(out)]) == 0
        blobs.append((out / name).read_bytes())
    assert blobs[0] == blobs[1]


def test_convergence_ideal_gas(tmp_path):
    argv = ["convergence", "--model", "strauss", "--gamma", "1", "--n-ladder", "8,16,32", "--method", "naive",
            "--samples", "1000", "--out", str(tmp_path)]
    assert run(argv) == 0
    data = read_csv(tmp_path / "convergence.csv")
    assert np.all(data["estimate"] == 0.0)
    assert (tmp_path / "convergence.png").exists()


def test_convergence_rejects_large_radius_on_ladder(tmp_path):
    argv = ["convergence", "--model", "strauss", "--r", "1.5", "--n-ladder", "8,64", "--out", str(tmp_path)]
    assert run(argv) == 1


def test_tail_command(tmp_path):
    argv = ["tail", "--model", "ideal", "--score", "neighbor_count", "--r", "0.5", "--n", "16",
            "--threshold", "1.0", "--samples", "500", "--out", str(tmp_path)]
    assert run(argv) == 0
    row = read_csv(tmp_path / "tail.csv")
    assert float(row["estimate"]) <= 0.0 and math.isfinite(float(row["estimate"]))
