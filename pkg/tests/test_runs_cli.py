import json
import os

import numpy as np
import pytest

from spinsqueeze import cli, runs
from spinsqueeze.dynamics import IntegrationError

SMALL_MODEL = {"n_spins": 2, "fock_cutoff": 3}


def test_unknown_keys_rejected_with_path():
    with pytest.raises(runs.ConfigError, match=r"\$\.model"):
        runs.run({"kind": "trajectory", "model": {"n_spinz": 2}}, out_root="unused")
    with pytest.raises(runs.ConfigError, match=r"\$\.sweep"):
        runs.run({"kind": "sweep", "model": SMALL_MODEL,
                  "sweep": {"loo": 1}}, out_root="unused")
    with pytest.raises(runs.ConfigError, match="unknown kind"):
        runs.run({"kind": "dance"}, out_root="unused")


def test_seed_mandatory_for_train_and_combine():
    with pytest.raises(runs.ConfigError, match="seed"):
        runs.run({"kind": "train", "model": SMALL_MODEL}, out_root="unused")
    with pytest.raises(runs.ConfigError, match="seed"):
        runs.run({"kind": "combine", "model": SMALL_MODEL}, out_root="unused")


def test_trajectory_run_and_cache(tmp_path):
    cfg = {"kind": "trajectory", "name": "traj-small", "model": SMALL_MODEL,
           "trajectory": {"zeta": 0.2, "t_final": 2.0, "noisy": True}}
    m1 = runs.run(cfg, out_root=str(tmp_path))
    assert set(m1["outputs"]) >= {"trajectory.csv", "trajectory.json", "summary.json"}
    m2 = runs.run(cfg, out_root=str(tmp_path))
    assert m2["wall_time_s"] == m1["wall_time_s"]  # served from cache
    m3 = runs.run(cfg, out_root=str(tmp_path), force=True)
    assert m3["config_hash"] == m1["config_hash"]
    # deterministic artifacts: forced rerun is byte-identical
    a = (tmp_path / "traj-small" / "trajectory.csv").read_bytes()
    assert a == open(os.path.join(m3["outdir"], "trajectory.csv"), "rb").read()


def test_manifest_replay_byte_identical(tmp_path):
    cfg = {"kind": "sweep", "name": "sw", "model": {**SMALL_MODEL, "kappa": 0.0,
                                                    "gamma": 0.0},
           "sweep": {"lo": -0.2, "hi": 0.2, "step": 0.2, "t_final": 2.0,
                     "noisy": False}}
    m1 = runs.run(cfg, out_root=str(tmp_path / "a"))
    blob1 = (tmp_path / "a" / "sw" / "sweep.csv").read_bytes()
    manifest_path = tmp_path / "a" / "sw" / "manifest.json"
    m2 = runs.run(str(manifest_path), out_root=str(tmp_path / "b"))
    assert m2["config_hash"] == m1["config_hash"]
    blob2 = (tmp_path / "b" / "sw" / "sweep.csv").read_bytes()
    assert blob1 == blob2


def test_failed_run_leaves_no_partial_outputs(tmp_path):
    cfg = {"kind": "trajectory", "name": "bad", "model": SMALL_MODEL,
           "trajectory": {"zeta": 0.2, "t_final": 2.3}}  # off the bin grid
    with pytest.raises(ValueError):
        runs.run(cfg, out_root=str(tmp_path))
    assert not (tmp_path / "bad").exists()


def test_train_run_artifacts(tmp_path):
    cfg = {"kind": "train", "name": "tr", "seed": 3,
           "model": {**SMALL_MODEL, "kappa": 0.0, "gamma": 0.0},
           "agent": {"episodes": 3, "steps_per_episode": 5, "warmup_episodes": 3,
                     "batch_size": 8, "action_low": -0.5, "action_high": 0.5},
           "train": {"horizon": 2.5}}
    m = runs.run(cfg, out_root=str(tmp_path))
    assert set(m["outputs"]) >= {"checkpoint.npz", "control.csv",
                                 "training_log.csv", "eval_trajectory.csv",
                                 "summary.json"}
    assert m["summary"]["episodes"] == 3


def test_validate_effective_run(tmp_path):
    cfg = {"kind": "validate-effective", "name": "ve",
           "model": {"n_spins": 2, "fock_cutoff": 4, "kappa": 0.0, "gamma": 0.0},
           "effective": {"zeta": 2.569, "t_final": 3.0, "record_every": 0.5}}
    m = runs.run(cfg, out_root=str(tmp_path))
    assert m["summary"]["m0"] == -1
    data = np.loadtxt(tmp_path / "ve" / "fidelity.csv", delimiter=",", skiprows=1)
    assert data[0, 1] == pytest.approx(1.0)
    assert (data[:, 1] > 0.99).all()


def test_gamma_scan_run(tmp_path):
    cfg = {"kind": "gamma-scan", "name": "gs", "model": SMALL_MODEL,
           "gamma_scan": {"gammas": [0.0, 0.02], "t_final": 2.0}}
    m = runs.run(cfg, out_root=str(tmp_path))
    assert len(m["summary"]["rows"]) == 2
    assert (tmp_path / "gs" / "gamma_0_nocontrol.csv").exists()


def test_angle_track_run(tmp_path):
    from spinsqueeze.dynamics import ControlSignal
    ctrl = ControlSignal.constant(0.1, t_final=2.0, dt_ctrl=0.5)
    path = tmp_path / "ctrl.csv"
    ctrl.to_csv(path)
    cfg = {"kind": "angle-track", "name": "at", "model": SMALL_MODEL,
           "angle_track": {"tv_noisy_csv": str(path), "record_every": 0.5}}
    m = runs.run(cfg, out_root=str(tmp_path))
    assert "tv_noisy" in m["summary"]["refs"]
    header = (tmp_path / "at" / "angle_track.csv").read_text().splitlines()[0]
    assert header.startswith("t,phi_opt_tv_noisy")
    # missing control file is a config error
    cfg_bad = {"kind": "angle-track", "model": SMALL_MODEL,
               "angle_track": {"combined_csv": str(tmp_path / "nope.csv")}}
    with pytest.raises(runs.ConfigError, match="not found"):
        runs.run(cfg_bad, out_root=str(tmp_path))


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg = {"kind": "trajectory", "name": "cli-ok", "model": SMALL_MODEL,
           "trajectory": {"zeta": 0.1, "t_final": 1.0, "noisy": True}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = cli.main(["trajectory", "--config", str(cfg_path),
                   "--out-root", str(tmp_path)])
    assert rc == 0
    assert "artifacts:" in capsys.readouterr().out

    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps({"kind": "trajectory", "model": {"nope": 1}}))
    assert cli.main(["trajectory", "--config", str(bad_path),
                     "--out-root", str(tmp_path)]) == cli.EXIT_CONFIG

    # subcommand/kind mismatch is a config error
    assert cli.main(["sweep", "--config", str(cfg_path),
                     "--out-root", str(tmp_path)]) == cli.EXIT_CONFIG

    def boom(*a, **kw):
        raise IntegrationError("trace drift 1e-3 at step 5")
    monkeypatch.setattr(runs, "run", boom)
    assert cli.main(["trajectory", "--config", str(cfg_path),
                     "--out-root", str(tmp_path)]) == cli.EXIT_NUMERICAL


def test_cli_overrides(tmp_path):
    rc = cli.main(["trajectory", "--out-root", str(tmp_path), "--name", "ovr",
                   "--set", "model.n_spins=2", "--set", "model.fock_cutoff=3",
                   "--set", "trajectory.zeta=0.1",
                   "--set", "trajectory.t_final=1.0",
                   "--set", "trajectory.noisy=true"])
    assert rc == 0
    summary = json.loads((tmp_path / "ovr" / "summary.json").read_text())
    assert summary["noisy"] is True


def test_env_var_out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(runs.ENV_OUT_ROOT, str(tmp_path / "envroot"))
    cfg = {"kind": "trajectory", "name": "env", "model": SMALL_MODEL,
           "trajectory": {"zeta": 0.0, "t_final": 1.0, "noisy": True}}
    m = runs.run(cfg)
    assert str(tmp_path / "envroot") in m["outdir"]
