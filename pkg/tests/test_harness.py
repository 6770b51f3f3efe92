import logging
import math

import numpy as np
import pytest

from evekf.errors import ConfigError, NoOverlap
from evekf.filter import REPORT_COLUMNS
from evekf.geometry import Pose, exp_so3, log_so3
from evekf.harness.cli import PLOT_COLUMNS, main, read_csv, write_csv
from evekf.harness.config import load_config
from evekf.harness.metrics import METRICS_COLUMNS, evaluate, interpolate_ground_truth
from evekf.simulator import make_const_accel_trajectory, make_const_velocity_trajectory, read_event_stream

from conftest import ROOT

TEXTURE = ROOT / "configs" / "textures" / "noise.pgm"

SMALL = f"""\
[scene]
texture = {TEXTURE}
[camera]
width = 48
height = 48
fx = 40
fy = 40
cx = 23.5
cy = 23.5
[trajectory]
type = const_velocity
v0 = 0.4 0.15 0
duration = 0.25
[simulator]
seed = 3
[calibrate]
num_events = 100000
[filter]
patch_size = 5
snapshot_every = 200
[output]
dir = out
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def out(tmp_path, name):
    return tmp_path / "out" / name


# --- config ---------------------------------------------------------------------------


def test_load_config_resolves_paths_and_overrides(small_cfg, tmp_path):
    cfg = load_config(small_cfg, ["simulator.C=0.2"])
    assert cfg.output("events") == tmp_path / "out" / "events.txt"
    assert cfg.contrast_model().C == 0.2
    assert cfg.intrinsics().width == 48
    assert cfg.seed == 3


def test_unknown_keys_are_rejected(small_cfg, tmp_path):
    with pytest.raises(ConfigError):
        load_config(small_cfg, ["simulator.threshold=0.2"])
    with pytest.raises(ConfigError):
        load_config(small_cfg, ["no_dot=1"])
    bad = tmp_path / "bad.ini"
    bad.write_text("[simulator]\nCC = 0.1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[nowhere]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_invalid_values_are_config_errors(small_cfg):
    with pytest.raises(ConfigError):
        load_config(small_cfg, ["simulator.policy=random"]).simulator_kwargs()
    with pytest.raises(ConfigError):
        load_config(small_cfg, ["filter.patch_size=4"]).filter_config()
    with pytest.raises(ConfigError):
        load_config(small_cfg, ["trajectory.v0=1 2"]).trajectory()


def test_missing_texture_exits_nonzero(small_cfg, capsys):
    assert main(["simulate", "--config", str(small_cfg), "--override", "scene.texture=nope.pgm"]) == 2
    assert "texture file not found" in capsys.readouterr().err


def test_missing_stage_input_is_data_error(small_cfg, capsys):
    assert main(["track", "--config", str(small_cfg)]) == 3
    assert "run the earlier pipeline stage" in capsys.readouterr().err


def test_zero_duration_gives_empty_stream(small_cfg, tmp_path):
    assert main(["simulate", "--config", str(small_cfg), "--override", "trajectory.duration=0"]) == 0
    assert len(read_event_stream(out(tmp_path, "events.txt"))) == 0


# --- pipeline ------------------------------------------------------------------------


@pytest.fixture
def piped(small_cfg, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="evekf"):
        assert main(["pipeline", "--config", str(small_cfg)]) == 0
    return tmp_path, [r.getMessage() for r in caplog.records]


def test_pipeline_writes_every_stage(piped):
    tmp_path, messages = piped
    for name in ("events.txt", "trajectory.txt", "contrast.ini", "histogram.csv", "report.csv",
                 "metrics.csv", "plotdata.csv"):
        assert out(tmp_path, name).is_file(), name
    # more calibration events requested than the stream holds
    assert any("using all" in m for m in messages)


def test_histogram_integrates_to_one(piped):
    tmp_path, _ = piped
    h = read_csv(out(tmp_path, "histogram.csv"), ["bin_lo", "bin_hi", "density"])
    assert np.sum((h[:, 1] - h[:, 0]) * h[:, 2]) == pytest.approx(1.0, abs=1e-6)


def test_plotdata_matches_report(piped):
    tmp_path, _ = piped
    rep = read_csv(out(tmp_path, "report.csv"), REPORT_COLUMNS)
    pd = read_csv(out(tmp_path, "plotdata.csv"), PLOT_COLUMNS)
    assert pd.shape == (rep.shape[0], len(PLOT_COLUMNS))
    lines = [ln for ln in out(tmp_path, "plotdata.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines[0] == ",".join(PLOT_COLUMNS)


def test_plotdata_of_empty_report_is_header_only(small_cfg, tmp_path):
    write_csv(out(tmp_path, "report.csv"), ["empty"], REPORT_COLUMNS, [])
    assert main(["plotdata", "--config", str(small_cfg)]) == 0
    lines = [ln for ln in out(tmp_path, "plotdata.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines == [",".join(PLOT_COLUMNS)]


def test_output_header_reproduces_file(piped):
    tmp_path, _ = piped
    for name, cmd in (("events.txt", "simulate"), ("report.csv", "track"), ("metrics.csv", "evaluate")):
        path = out(tmp_path, name)
        before = path.read_bytes()
        copy = tmp_path / f"copy_{name}"
        copy.write_bytes(before)
        assert main([cmd, "--config", str(copy)]) == 0
        assert path.read_bytes() == before, name


# --- metrics ---------------------------------------------------------------------------


def _report_from_states(t, states):
    n = len(t)
    return np.column_stack([t, states, np.zeros(n), np.zeros(n)])


def test_evaluate_identity_gives_zero():
    traj = make_const_accel_trajectory(Pose((0, 0, 0), (0.1, 0, 0)), (0.2, 0, 0), (0.5, 0.1, 0),
                                       1.0, 100, omega=(0, 0, 0.2))
    t = np.linspace(0, 1, 37)
    m = evaluate(_report_from_states(t, interpolate_ground_truth(traj, t)), traj)
    assert np.all(m.rel_pos_err == 0) or np.max(m.rel_pos_err) < 1e-15
    assert np.max(m.rel_vel_err) < 1e-15
    assert np.max(m.rot_err_rad) < 1e-7


def test_evaluate_offset_and_rotation():
    traj = make_const_velocity_trajectory(Pose(), (1.0, 0, 0), 1.0, 100)
    t = np.linspace(0.1, 1.0, 10)
    gt = interpolate_ground_truth(traj, t)
    est = gt.copy()
    est[:, 0] += 0.01
    yaw = math.radians(1.0)
    est[:, 3:6] = np.array([log_so3(exp_so3([0, 0, yaw]) @ exp_so3(r)) for r in gt[:, 3:6]])
    m = evaluate(_report_from_states(t, est), traj)
    assert m.rel_pos_err[-1] == pytest.approx(0.01)
    np.testing.assert_allclose(m.rot_err_rad, yaw, rtol=1e-9)
    assert m.rel_vel_err.max() == 0


def test_evaluate_needs_overlap():
    traj = make_const_velocity_trajectory(Pose(), (1.0, 0, 0), 1.0, 100)
    with pytest.raises(NoOverlap):
        evaluate(_report_from_states([5.0], np.zeros((1, 12))), traj)


def test_window_aggregates_use_final_snapshots():
    traj = make_const_velocity_trajectory(Pose(), (1.0, 0, 0), 1.0, 100)
    t = np.linspace(0.1, 1.0, 10)
    est = interpolate_ground_truth(traj, t)
    est[:3, 0] += 1.0  # large error only early on
    m = evaluate(_report_from_states(t, est), traj, window=0.7)
    assert m.aggregates()["median_rel_pos_err"] == 0
    assert METRICS_COLUMNS[0] == "t"
