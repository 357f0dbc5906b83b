import json
import os

import numpy as np
import pytest

from landau_lab import cli
from landau_lab.errors import ConfigError
from landau_lab.grid import make_grid, maxwellian, write_field
from landau_lab.report import sha256_file


def minimal_config(**over):
    cfg = {
        "grid": {"dim": 3, "half_extent": 8.0, "points_per_axis": 12},
        "gamma": 0.0,
        "initial_profile": {"kind": "maxwellian"},
        "scheme": "imex",
        "t_final": 0.2,
        "snapshot_stride": 1,
        "seed": 3,
    }
    cfg.update(over)
    return cfg


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_parse_config_reports_all_problems():
    with pytest.raises(ConfigError) as err:
        cli.parse_config({"grid": {"dim": 3}, "scheme": "bogus"})
    msg = str(err.value)
    assert "gamma" in msg
    assert "t_final" in msg
    assert "half_extent" in msg
    assert "scheme" in msg
    assert "initial_profile" in msg


def test_parse_config_gamma_range():
    cfg = minimal_config(gamma=-5.0)
    with pytest.raises(ConfigError) as err:
        cli.parse_config(cfg)
    assert "gamma" in str(err.value)


def test_simulate_writes_run_dir(tmp_path):
    cfg_path = write_config(tmp_path, minimal_config())
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "ledger.csv").exists()
    assert (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["gamma"] == 0.0
    assert len(manifest["snapshots"]) >= 2
    # constant-entropy ledger for equilibrium data
    rows = (out / "ledger.csv").read_text().strip().splitlines()
    header = rows[0].split(",")
    h_idx = header.index("entropy")
    entropies = [float(r.split(",")[h_idx]) for r in rows[1:]]
    assert max(entropies) - min(entropies) < 1e-4  # coarse-grid slack


def test_simulate_t_final_zero(tmp_path):
    cfg_path = write_config(tmp_path, minimal_config(t_final=0.0))
    out = tmp_path / "run0"
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["snapshots"]) == 1


def test_simulate_missing_gamma_exit_code(tmp_path):
    cfg = minimal_config()
    del cfg["gamma"]
    cfg_path = write_config(tmp_path, cfg)
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "x")]) == 2


def test_simulate_byte_identical_reruns(tmp_path):
    cfg_path = write_config(tmp_path, minimal_config())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(out1)])
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(out2)])
    for name in ["ledger.csv", "manifest.json", "snapshot_00000.llf"]:
        assert sha256_file(out1 / name) == sha256_file(out2 / name), name


def test_diagnose_on_field_and_run(tmp_path):
    grid = make_grid(3, 8.0, 12)
    M = maxwellian(grid)
    field_path = tmp_path / "M.llf"
    write_field(field_path, M)
    out = tmp_path / "diag"
    rc = cli.main(
        ["diagnose", str(field_path), "--which", "weights", "--out", str(out), "--gamma", "-1"]
    )
    assert rc == 0
    rep = json.loads((out / "weights.json").read_text())
    assert "doubling" in rep and rep["doubling"]["constant_name"] == "C_D"
    # gamma is mandatory for raw snapshots
    assert cli.main(["diagnose", str(field_path), "--which", "weights", "--out", str(out)]) == 2


def test_diagnose_unknown_kind_rejected(tmp_path):
    grid = make_grid(3, 8.0, 12)
    write_field(tmp_path / "f.llf", maxwellian(grid))
    with pytest.raises(SystemExit):
        cli.main(["diagnose", str(tmp_path / "f.llf"), "--which", "bogus", "--out", str(tmp_path)])


def test_diagnose_corrupt_snapshot(tmp_path):
    bad = tmp_path / "bad.llf"
    bad.write_bytes(b"XXXX" + b"\x00" * 64)
    rc = cli.main(["diagnose", str(bad), "--which", "weights", "--out", str(tmp_path), "--gamma", "-1"])
    assert rc == 1


def test_diagnose_poincare_and_coefficients(tmp_path):
    grid = make_grid(3, 6.0, 12)
    field_path = tmp_path / "M.llf"
    write_field(field_path, maxwellian(grid))
    out = tmp_path / "diag2"
    rc = cli.main(
        ["diagnose", str(field_path), "--which", "poincare", "--out", str(out), "--gamma", "-1"]
    )
    assert rc == 0
    assert (out / "lambda_curve.csv").exists()
    rc = cli.main(
        ["diagnose", str(field_path), "--which", "coefficients", "--out", str(out), "--gamma", "-1"]
    )
    assert rc == 0
    rep = json.loads((out / "coefficients.json").read_text())
    assert "constants" in rep and "comparability" in rep


def test_rates_command_requires_snapshots(tmp_path):
    cfg_path = write_config(tmp_path, minimal_config(t_final=0.0))
    out = tmp_path / "short"
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)])
    rc = cli.main(["rates", str(out), "--out", str(tmp_path / "fits")])
    assert rc == 2


def test_rates_command_on_run(tmp_path):
    cfg = minimal_config(
        grid={"dim": 3, "half_extent": 4.0, "points_per_axis": 16},
        initial_profile={"kind": "squeezed_gaussian", "sigma": 0.3},
        t_final=1.5,
        dt={"t_ramp": 0.3, "dt_max": 0.1},
    )
    cfg_path = write_config(tmp_path, cfg)
    run_dir = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(run_dir)]) == 0
    rc = cli.main(["rates", str(run_dir), "--R", "1.0,2.0", "--out", str(tmp_path / "fits")])
    assert rc == 0
    fit = json.loads((tmp_path / "fits" / "rate_fit_R2.json").read_text())
    assert "alpha_hat" in fit
    assert (tmp_path / "fits" / "history_R2.csv").exists()


def test_load_trajectory_roundtrip(tmp_path):
    cfg_path = write_config(tmp_path, minimal_config())
    run_dir = tmp_path / "run"
    cli.main(["simulate", "--config", str(cfg_path), "--out", str(run_dir)])
    traj = cli.load_trajectory(run_dir)
    assert traj.gamma == 0.0
    assert len(traj.times) == len(traj.snapshots)
    assert traj.ledger[0].mass == pytest.approx(1.0, abs=1e-12)


def test_profile_kinds(tmp_path):
    grid = make_grid(3, 8.0, 16)
    rng = np.random.default_rng(0)
    for prof in (
        {"kind": "maxwellian"},
        {"kind": "squeezed_gaussian", "sigma": 0.5},
        {"kind": "counterexample", "m": 2.0},
        {"kind": "shell"},
    ):
        f = cli.build_profile(grid, prof, rng)
        assert np.all(f.values >= 0)
    path = tmp_path / "f.llf"
    write_field(path, maxwellian(grid))
    f = cli.build_profile(grid, {"kind": "file", "path": str(path)}, rng)
    assert f.values.max() > 0


def test_verify_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["verify", "--suite", "bogus"])
