import csv
import hashlib
import json
import time

import numpy as np
import pytest

from dmmppi import cli
from dmmppi.offline import read_dataset
from dmmppi.scenario import env_from_dict, env_to_dict, load_scenario
from dmmppi.vehicle import DomainError, EnvConfig, read_trajectory_csv

SMALL = ["--n", "2", "--k", "4", "--m", "8", "--epochs", "3"]


def run(args, tmp_path, capsys=None):
    code = cli.main(list(args) + ["--out", str(tmp_path)])
    return code


def body_lines(path):
    return [ln for ln in open(path).read().splitlines() if not ln.startswith("#")]


def test_default_settings_match_reference_constants():
    cfg = cli.resolve({}, {})
    oc = cli.offline_config(cfg)
    assert (oc.N, oc.K, oc.fit.M, oc.fit.alpha, oc.fit.mu, oc.lam) == (200, 100, 50, 0.5, 0.01, 100.0)
    assert (oc.train.epochs, oc.train.lr) == (1000, 1e-3)
    assert oc.rho0 == 1e10
    on = cli.online_config(cfg, 0.0)
    assert (on.r_target, on.eta, on.rho_min, on.rho_max) == (0.05, 1e9, 0.0, 1e12)
    assert cfg["k_grid"] == list(range(50, 501, 50))
    assert cfg["seeds"] == [0, 1, 2, 3, 4]
    assert cfg["steps"] == 400


def test_config_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nk = 300\nlam=50  # inline\nseeds = 1,3\n")
    cfg = cli.resolve(cli.parse_config_file(f), {"k": "20"})
    assert cfg["k"] == 20
    assert cfg["lam"] == 50.0
    assert cfg["seeds"] == [1, 3]


def test_config_errors_name_the_key(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("kk = 3\n")
    with pytest.raises(cli.ConfigError, match="kk"):
        cli.parse_config_file(f)
    with pytest.raises(cli.ConfigError, match="'lam'"):
        cli.resolve({"lam": "hot"}, {})
    assert cli.main(["run", "--steps", "x", "--out", str(tmp_path)]) == 2


def test_offline_smoke(tmp_path):
    assert run(["offline"] + SMALL, tmp_path) == 0
    out = tmp_path / "offline"
    assert len(read_dataset(out / "dataset.csv")) == 8
    assert (out / "model.bin").exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["n"] == 2 and rep["report"]["rows"] == 8
    assert "scenario" in rep


def test_offline_checksums_repeat(tmp_path):
    sums = []
    for name in ("a", "b"):
        assert run(["offline"] + SMALL, tmp_path / name) == 0
        sums.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                     for p in sorted((tmp_path / name / "offline").iterdir())})
    assert sums[0] == sums[1]


def test_every_artifact_records_config(tmp_path):
    assert run(["offline"] + SMALL, tmp_path) == 0
    assert run(["run", "--mode", "dm-fixed", "--k", "8", "--steps", "3", "--seeds", "0"], tmp_path) == 0
    for p in list((tmp_path / "offline").glob("*.csv")) + list((tmp_path / "run").glob("*.csv")):
        head = p.read_text().splitlines()[:3]
        assert head[1].startswith("# config: {") and head[2].startswith("# scenario: {"), p
    summary = json.loads((tmp_path / "run" / "dm-fixed_K8_summary.json").read_text())
    assert summary["config"]["k"] == 8


def test_run_writes_trajectories_and_diagnostics(tmp_path):
    assert run(["offline"] + SMALL, tmp_path) == 0
    assert run(["run", "--mode", "dm-adaptive", "--k", "8", "--steps", "5", "--seeds", "0-1"], tmp_path) == 0
    d = tmp_path / "run"
    for seed in (0, 1):
        traj = read_trajectory_csv(d / f"dm-adaptive_K8_seed{seed}_trajectory.csv")
        assert traj.shape == (5, 7)
        rows = list(csv.reader(body_lines(d / f"dm-adaptive_K8_seed{seed}_diagnostics.csv")))
        assert rows[0] == ["iter", "rho", "r_viol", "kept", "K_eff", "ms"]
        assert len(rows) == 6
    summary = json.loads((d / "dm-adaptive_K8_summary.json").read_text())
    assert len(summary["per_seed"]) == 2
    assert set(summary["summary"]["position_rmse"]) == {"mean", "std"}


def test_zero_step_run_has_header_only(tmp_path):
    assert run(["run", "--steps", "0", "--seeds", "0", "--k", "5"], tmp_path) == 0
    assert body_lines(tmp_path / "run" / "standard_K5_seed0_trajectory.csv") == ["t,px,py,psi,v,delta,a"]


def test_missing_model_is_an_error(tmp_path, capsys):
    assert run(["run", "--mode", "dm-fixed", "--model", str(tmp_path / "none.bin")], tmp_path) == 2
    assert "model not found" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["run", "--steps", "1", "--seeds", "0", "--k", "4"]) == 0
    assert (tmp_path / "envroot" / "run" / "standard_K4_seed0_trajectory.csv").exists()


def test_sweep_smoke_grid(tmp_path):
    assert run(["offline"] + SMALL, tmp_path) == 0
    t0 = time.time()
    assert run(["sweep", "--k-grid", "10,20", "--seeds", "0,1", "--steps", "20"], tmp_path) == 0
    assert time.time() - t0 < 60
    rows = list(csv.reader(body_lines(tmp_path / "sweep" / "sweep.csv")))
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS
    assert len(rows) - 1 == 2 * 2 * 2
    svg = (tmp_path / "sweep" / "sweep.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_svg_is_pure():
    from dmmppi.svg import line_plot
    series = {"a": [(1.0, 0.5, 0.1), (2.0, 0.3, 0.05)], "b": [(1.0, 0.2, 0.0)]}
    assert line_plot(series, "t", "x", "y") == line_plot(dict(series), "t", "x", "y")


def test_validate_reports_each_check(tmp_path, capsys):
    code = run(["validate"], tmp_path)
    out = capsys.readouterr().out
    report = json.loads((tmp_path / "validate" / "validate.json").read_text())
    names = [c["name"] for c in report["checks"]]
    assert "mask_bit_independence" in names and "lasso_matches_normal_equations" in names
    assert out.count("PASS") + out.count("FAIL") == len(names)
    assert code == (0 if all(c["passed"] for c in report["checks"]) else 1)


def test_scenario_roundtrip(tmp_path):
    env = EnvConfig(goal_weights=(3.0, 2.0, 1.0), obstacles=[[1.0, 2.0, 0.5]], T=7)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(env_to_dict(env)))
    back = load_scenario(path)
    assert env_to_dict(back) == env_to_dict(env)


def test_scenario_partial_and_errors():
    env = env_from_dict({"path": {"radius": 5.0, "straight": 10.0}, "obstacles": []})
    assert len(env.obstacles) == 0
    assert np.max(np.abs(env.waypoints[:, 1])) == pytest.approx(5.0)
    with pytest.raises(DomainError):
        env_from_dict({"cost": {"weights": [1, 2, 3]}})
    with pytest.raises(DomainError):
        env_from_dict({"track": {}})
