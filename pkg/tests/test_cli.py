import csv
import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from dctmarl.cli import main
from dctmarl.config import default_config, dump_config
from dctmarl.controllers import CthpPdController
from dctmarl.environment import PlatoonEnv
from dctmarl.marl import FeatureSpec, Learner, Rollout
from dctmarl.metrics import EpisodeLog, summarize
from dctmarl.topology import read_adjacency_csv, write_adjacency_csv
from dctmarl.traces import constant_trace


def small_cfg(**train):
    t = {"hidden_width": 16, "batch_size": 8, "warmup_steps": 20, "total_steps": 60, "prior_batch": 4}
    t.update(train)
    return default_config().replace(
        scenario={"n_followers": 3, "episode_len": 40},
        topology={"encoder_width": 8, "gate_width": 8, "m_keys": 2},
        train=t)


@pytest.fixture
def ini(tmp_path):
    def write(cfg=None, name="cfg.ini"):
        path = tmp_path / name
        path.write_text(dump_config(cfg or small_cfg()), encoding="utf-8")
        return str(path)
    return write


def _csv_files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*.csv"))}


# -- train -----------------------------------------------------------------------------


def test_train_three_seeds_three_curves(tmp_path, ini):
    out = tmp_path / "run"
    assert main(["train", "--config", ini(), "--seed", "1,2,3", "--out", str(out)]) == 0
    for s in (1, 2, 3):
        assert (out / f"curve_seed{s}.csv").exists()
        assert (out / f"checkpoint_seed{s}.dctm").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [1, 2, 3] and len(manifest["checkpoints"]) == 3
    assert list(out.glob("manifest*.json")) == [out / "manifest.json"]
    assert (out / "learning_curve.svg").exists()


def test_train_missing_config_exits_1(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_invalid_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\ngamma = 1.5\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_train_null_run(tmp_path, ini):
    out = tmp_path / "run"
    assert main(["train", "--config", ini(), "--seed", "5", "--total-steps", "0", "--out", str(out)]) == 0
    assert len((out / "curve_seed5.csv").read_text().splitlines()) == 1


def test_train_nan_exits_2(tmp_path, ini, monkeypatch):
    monkeypatch.setattr(Learner, "update_critic", lambda self, batch, rng: np.array([np.nan] * 3))
    out = tmp_path / "run"
    assert main(["train", "--config", ini(), "--seed", "1", "--out", str(out)]) == 2
    assert (out / "nan_dump_seed1.json").exists()


# -- eval / sim ----------------------------------------------------------------------------


@pytest.fixture
def trained(tmp_path, ini):
    out = tmp_path / "trained"
    assert main(["train", "--config", ini(), "--seed", "1", "--out", str(out)]) == 0
    return out / "checkpoint_seed1.dctm"


def test_eval_shape_mismatch_exits_3(tmp_path, ini, trained):
    other = ini(small_cfg(hidden_width=12), "other.ini")
    assert main(["eval", "--checkpoint", str(trained), "--config", other, "--out", str(tmp_path / "e")]) == 3


def test_eval_missing_checkpoint_exits_1(tmp_path, ini):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.dctm"), "--config", ini(),
                 "--out", str(tmp_path / "e")]) == 1


def test_eval_writes_logs_metrics_and_plots(tmp_path, ini, trained):
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained), "--config", ini(), "--episodes", "2",
                 "--out", str(out)]) == 0
    for name in ("episode_1.csv", "episode_2.csv", "adjacency_1.csv", "metrics.csv", "metrics.json",
                 "episode_1_velocity.svg", "episode_1_acceleration.svg", "episode_1_comfort.svg",
                 "heatmap.svg", "manifest.json"):
        assert (out / name).exists(), name
    table = json.loads((out / "metrics.json").read_text())
    assert list(table["String Stability"]) == ["DCT-MARL"]
    assert table["vehicles"] == ["CAV_1", "CAV_2", "CAV_3"]


def test_fixed_topology_selects_every_delivered_link(tmp_path, ini, trained):
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained), "--config", ini(), "--ablation", "fixed-topology",
                 "--out", str(out)]) == 0
    sel, delivered = read_adjacency_csv(out / "adjacency_1.csv")
    assert delivered.any()
    assert np.array_equal(sel, delivered)


def test_eval_and_sim_trained_are_identical(tmp_path, ini, trained):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    common = ["--checkpoint", str(trained), "--config", ini(), "--episodes", "2", "--seed", "9"]
    assert main(["eval", *common, "--out", str(a)]) == 0
    assert main(["eval", *common, "--out", str(b)]) == 0
    assert main(["sim", "--controller", "trained", *common, "--out", str(c)]) == 0
    assert _csv_files(a) == _csv_files(b) == _csv_files(c)


def test_sim_unknown_controller_exits_1(tmp_path, ini):
    assert main(["sim", "--controller", "bang-bang", "--config", ini(), "--out", str(tmp_path)]) == 1


def test_sim_cthp_pd_runs_and_is_deterministic(tmp_path, ini):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sim", "--config", ini(), "--episodes", "2", "--out", str(a)]) == 0
    assert main(["sim", "--config", ini(), "--episodes", "2", "--out", str(b)]) == 0
    assert _csv_files(a) == _csv_files(b)
    assert list(json.loads((a / "metrics.json").read_text())["Driving Comfort"]) == ["CTHP-PD"]


def test_cthp_pd_settles_gap_error_within_ten_seconds():
    cfg = default_config().replace(scenario={"episode_len": 300})
    spec = FeatureSpec.from_config(cfg)
    env = PlatoonEnv(cfg)
    ro = Rollout(env, spec)
    ro.reset(constant_trace(20.0, 40.0, cfg.scenario.dt), np.random.default_rng(0))
    for k in range(1, env.n_vehicles):
        env.states[k] = dataclasses.replace(env.states[k], pos=env.states[k].pos + (3.0 if k % 2 else -2.0))
    ctrl = CthpPdController(spec, cfg.scenario.u_min, cfg.scenario.u_max)
    errs, done = [], False
    while not done:
        _, done, _ = ro.step(ctrl.decide(ro.feat))
        errs.append(env.gap_errors().copy())
    errs = np.array(errs)
    t = cfg.scenario.dt * np.arange(1, len(errs) + 1)
    assert np.abs(errs[:3]).max() > 1.0
    assert np.abs(errs[t >= 10.0]).max() < 1.0


# -- heatmap ----------------------------------------------------------------------------------


def _write_trace(path, sel):
    write_adjacency_csv(path, sel, sel)


def _read_heatmap(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [[c for c in r[1:]] for r in rows]


def test_heatmap_all_false_is_zero(tmp_path):
    _write_trace(tmp_path / "adjacency_1.csv", np.zeros((20, 4, 4), bool))
    assert main(["heatmap", "--logs", str(tmp_path)]) == 0
    cells = _read_heatmap(tmp_path / "heatmap.csv")
    for s in range(4):
        for r in range(1, 4):
            if s != r:
                assert float(cells[s][r]) == 0.0


def test_heatmap_counts_always_on_link(tmp_path):
    rng = np.random.default_rng(0)
    for k in (1, 2):
        sel = rng.random((30, 4, 4)) < 0.3
        sel[:, 2, 1] = True            # receiver 2 hears sender 1 every step
        sel[:, np.arange(4), np.arange(4)] = False
        (tmp_path / f"run{k}").mkdir()
        _write_trace(tmp_path / f"run{k}" / "adjacency_1.csv", sel)
    out = tmp_path / "out"
    assert main(["heatmap", "--logs", str(tmp_path), "--out", str(out)]) == 0
    cells = _read_heatmap(out / "heatmap.csv")
    assert float(cells[1][2]) == 1.0
    assert all(cells[s][0] == "N/A" for s in range(4))
    assert (out / "heatmap.svg").read_text().count("N/A") >= 4
    assert (out / "manifest.json").exists()


def test_heatmap_counting_oracle(tmp_path):
    rng = np.random.default_rng(1)
    sel = rng.random((50, 3, 3)) < 0.4
    sel[:, np.arange(3), np.arange(3)] = False
    sel[:, 0, :] = False
    _write_trace(tmp_path / "adjacency_1.csv", sel)
    assert main(["heatmap", "--logs", str(tmp_path)]) == 0
    cells = _read_heatmap(tmp_path / "heatmap.csv")
    for s in range(3):
        for r in range(1, 3):
            if s != r:
                assert float(cells[s][r]) == pytest.approx(sum(sel[t, r, s] for t in range(50)) / 50, abs=1e-15)


def test_heatmap_empty_logs_exit_1(tmp_path):
    assert main(["heatmap", "--logs", str(tmp_path)]) == 1


# -- metrics ------------------------------------------------------------------------------------


def _perfect_log(cfg, steps=50, v=15.0):
    sc = cfg.scenario
    log = EpisodeLog.empty_like_config(sc, steps, 3)
    spacing = sc.vehicle_len_l + sc.standstill_d0 + sc.headway_h * v
    t = sc.dt * np.arange(steps)
    log.vel[:] = v
    for k in range(3):
        log.pos[:, k] = v * t - k * spacing
    return log


def test_metrics_command_perfect_tracking(tmp_path):
    cfg = default_config()
    log = _perfect_log(cfg)
    log.write_csv(tmp_path / "episode_1.csv")
    assert main(["metrics", "--logs", str(tmp_path), "--plots", "--method", "toy"]) == 0
    table = json.loads((tmp_path / "metrics.json").read_text())
    ref = summarize([log], np.array(cfg.metrics.stability_c).reshape(2, 2), "toy")
    assert table == json.loads(ref.to_json())
    assert all(abs(s) < 1e-9 for s in table["String Stability"]["toy"]["mean"])
    assert (tmp_path / "episode_1_velocity.svg").exists()


def test_metrics_empty_logs_exit_1(tmp_path):
    assert main(["metrics", "--logs", str(tmp_path)]) == 1


# -- parser ----------------------------------------------------------------------------------------


def test_help_documents_every_flag(capsys):
    assert main(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in ("train", "eval", "sim", "heatmap", "metrics"):
        assert cmd in text
    assert main(["eval", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--checkpoint", "--config", "--episodes", "--ablation", "--seed", "--out"):
        assert flag in text


def test_bad_arguments_exit_1(tmp_path):
    assert main(["train"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--seed", "a,b", "--out", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dctmarl", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "dctmarl" in res.stdout
