import json

import numpy as np
import pytest

from sim3cal import io
from sim3cal.cli import format_noise_table, main
from sim3cal.cost import mean_abs_p2p
from sim3cal.liegroup import SimilarityTransform
from sim3cal.solvers import CalibrationResult


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    """Noiseless tetrahedron scan with per-ring Sim(3) errors."""
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--scene", "tetrahedron", "--seed", 3, "--range-sigma", 0,
               "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def cal_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cal")
    rc = run("calibrate", "--cloud", sim_dir / "cloud.csv", "--scene", sim_dir / "scene.json",
             "--truth", sim_dir / "truth.json", "--out", out)
    assert rc == 0
    return out


# -- simulate -------------------------------------------------------------------------


def test_simulate_tetrahedron_hits_four_targets(sim_dir):
    r = io.read_cloud(sim_dir / "cloud.csv")
    assert sorted(set(r.target_id.tolist())) == [0, 1, 2, 3]
    m = io.read_json(sim_dir / "manifest.json")
    assert set(m["outputs"]) == {"cloud", "truth", "scene"}
    assert io.read_json(sim_dir / "truth.json")["kind"] == "sim3"


def test_simulate_is_byte_identical_under_seed_reuse(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--scene", "tetrahedron", "--seed", 9, "--out", tmp_path / d) == 0
    for f in ("cloud.csv", "truth.json", "scene.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ma = io.read_json(tmp_path / "a" / "manifest.json")
    mb = io.read_json(tmp_path / "b" / "manifest.json")
    assert ma["outputs"] == mb["outputs"]


def test_simulate_accepts_opa(tmp_path):
    assert run("simulate", "--scene", "opa-train", "--lidar", "opa20x20", "--seed", 1,
               "--out", tmp_path) == 0
    r = io.read_cloud(tmp_path / "cloud.csv")
    assert r.collection_id.max() < 400
    assert len(set(r.target_id.tolist())) == 4


def test_simulate_requires_seed(tmp_path, capsys):
    assert run("simulate", "--scene", "tetrahedron", "--out", tmp_path) == 2
    assert "--seed" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "range-sigma": 0.0, "perturbation": "none"}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert io.read_json(tmp_path / "a" / "truth.json")["kind"] == "none"
    assert run("simulate", "--config", cfg, "--perturbation", "bl1", "--out", tmp_path / "b") == 0
    assert io.read_json(tmp_path / "b" / "truth.json")["kind"] == "bl1"
    m = io.read_json(tmp_path / "a" / "manifest.json")
    assert m["config"]["seed"] == 4 and m["config_hash"] == io.config_hash(m["config"])


def test_bad_inputs_give_config_exit_code(tmp_path):
    assert run("simulate", "--scene", "nowhere.json", "--seed", 1, "--out", tmp_path) == 2
    assert run("simulate", "--perturbation", "systematic:9", "--seed", 1, "--out", tmp_path) == 2
    assert run("calibrate", "--cloud", tmp_path / "x.csv", "--scene", "tetrahedron",
               "--out", tmp_path) == 2
    assert run("bogus-command") == 2


# -- check-scene ----------------------------------------------------------------------


def test_check_scene_tetrahedron_ok(capsys, tmp_path):
    assert run("check-scene", "--scene", "tetrahedron", "--out", tmp_path) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["status"] == "ok" and rep["assumption_n_ok"] and rep["assumption_b_ok"]
    assert io.read_json(tmp_path / "placement.json") == rep


def test_check_scene_degenerate_prints_q0(capsys):
    assert run("check-scene", "--scene", "degenerate") == 4
    cap = capsys.readouterr()
    rep = json.loads(cap.out)
    assert rep["status"] == "scale_unidentifiable"
    assert "ScaleUnidentifiable" in cap.err and "q0" in cap.err
    np.testing.assert_allclose(rep["q0"], [0, 3, 0], atol=1e-12)


def test_check_scene_two_targets_warns(capsys):
    assert run("check-scene", "--scene", "two-target") == 4
    cap = capsys.readouterr()
    assert "not unique" in cap.err
    assert json.loads(cap.out)["status"] == "too_few_targets"


# -- calibrate ------------------------------------------------------------------------


def test_calibrate_sim3_removes_injected_error(cal_dir):
    d = io.read_json(cal_dir / "calibration.json")
    assert d["residuals"]["truth"]["removed_fraction"] >= 0.99
    assert d["residuals"]["training"]["calibrated_mean_abs_p2p"] <= 1e-6
    res = CalibrationResult.from_dict(d)
    assert set(res.status.values()) == {"ok"}


def test_calibrate_bl1_recovers_parameters(tmp_path):
    assert run("simulate", "--scene", "tetrahedron", "--perturbation", "bl1", "--seed", 5,
               "--range-sigma", 0, "--out", tmp_path / "s") == 0
    assert run("calibrate", "--cloud", tmp_path / "s" / "cloud.csv", "--scene",
               tmp_path / "s" / "scene.json", "--model", "bl1", "--out", tmp_path / "c") == 0
    truth = io.perturbation_from_dict(io.read_json(tmp_path / "s" / "truth.json"))
    res = CalibrationResult.from_dict(io.read_json(tmp_path / "c" / "calibration.json"))
    for k, p in res.transforms.items():
        # the cloud stores 9 significant digits
        assert np.abs(p.as_array() - truth.params[k].as_array()).max() <= 1e-4


def test_calibrate_degenerate_scene_exit_code(tmp_path):
    assert run("simulate", "--scene", "degenerate", "--seed", 2, "--out", tmp_path / "s") == 0
    assert run("calibrate", "--cloud", tmp_path / "s" / "cloud.csv", "--scene",
               tmp_path / "s" / "scene.json", "--out", tmp_path / "c") == 4
    res = CalibrationResult.from_dict(io.read_json(tmp_path / "c" / "calibration.json"))
    assert set(res.status.values()) == {"scale_unidentifiable"}


def test_calibrate_rejects_bad_scale_range(sim_dir, tmp_path):
    assert run("calibrate", "--cloud", sim_dir / "cloud.csv", "--scene", sim_dir / "scene.json",
               "--s-min", 1.1, "--out", tmp_path) == 2


# -- validate -------------------------------------------------------------------------


def test_validate_identity_result_on_ideal_data(tmp_path):
    assert run("simulate", "--scene", "tetrahedron", "--perturbation", "none", "--seed", 1,
               "--range-sigma", 0, "--out", tmp_path / "s") == 0
    ident = CalibrationResult("sim3", {k: SimilarityTransform.identity() for k in range(32)},
                              {k: "ok" for k in range(32)}, {k: 0.0 for k in range(32)})
    io.write_json(tmp_path / "id.json", ident.to_dict(timing=False))
    assert run("validate", "--result", tmp_path / "id.json", "--cloud",
               tmp_path / "s" / "cloud.csv", "--scene", tmp_path / "s" / "scene.json",
               "--profile-points", 0, "--out", tmp_path / "v") == 0
    m = io.read_json(tmp_path / "v" / "metrics.json")
    assert m["uncalibrated"]["mean_abs_p2p"] <= 1e-8
    assert m["calibrated"]["mean_abs_p2p"] <= 1e-8


def test_validate_metrics_match_cost_oracle(sim_dir, cal_dir, tmp_path):
    assert run("validate", "--result", cal_dir / "calibration.json", "--cloud",
               sim_dir / "cloud.csv", "--scene", sim_dir / "scene.json", "--profile-points", 5,
               "--out", tmp_path) == 0
    m = io.read_json(tmp_path / "metrics.json")
    r = io.read_cloud(sim_dir / "cloud.csv")
    targets = io.read_scene(sim_dir / "scene.json").targets
    res = CalibrationResult.from_dict(io.read_json(cal_dir / "calibration.json"))
    cal = res.apply(r)
    assert m["uncalibrated"]["mean_abs_p2p"] == pytest.approx(
        mean_abs_p2p(None, r.points, r.target_id, targets), rel=1e-12)
    assert m["calibrated"]["mean_abs_p2p"] == pytest.approx(
        mean_abs_p2p(None, cal.points, cal.target_id, targets), rel=1e-12)
    prof = np.loadtxt(tmp_path / "scale_profile.csv", delimiter=",", skiprows=1)
    assert prof.shape == (32 * 5, 3)
    # the calibrated scale sits at the profile minimum
    for k in (0, 17):
        rows = prof[prof[:, 0] == k]
        assert np.argmin(rows[:, 2]) == 2
    hist = np.loadtxt(tmp_path / "residual_histogram.csv", delimiter=",", skiprows=1)
    assert hist[:, 2].sum() == hist[:, 3].sum() == len(r)


# -- sweeps ---------------------------------------------------------------------------


def test_noise_table_layout():
    table = {"levels": list(range(8)), "uncalibrated": [0.01] * 8, "sim3": [0.004] * 8,
             "bl1": [0.02] * 8, "bl2": [0.03] * 8}
    lines = format_noise_table(table).splitlines()
    assert lines[0] == "method," + ",".join(f"Noise {k}" for k in range(8))
    assert [ln.split(",")[0] for ln in lines[1:]] == ["Uncalibrated", "Sim3", "BL1", "BL2"]


def test_sweep_noise_two_levels(tmp_path, capsys):
    assert run("sweep-noise", "--seed", 1, "--levels", "0,7", "--models", "sim3",
               "--out", tmp_path) == 0
    lines = (tmp_path / "noise_table.csv").read_text().splitlines()
    assert lines[0] == "method,Noise 0,Noise 7"
    unc = [float(x) for x in lines[1].split(",")[1:]]
    assert unc[1] > unc[0]
    assert run("sweep-noise", "--seed", 1, "--levels", "0-8", "--out", tmp_path) == 2


def test_sweep_orientation_small(tmp_path):
    assert run("sweep-orientation", "--count", 2, "--seed", 3, "--out", tmp_path) == 0
    s = io.read_json(tmp_path / "summary.json")
    assert s["runs"] == 2 and s["min_reduction"] >= 0.4
    assert len((tmp_path / "orientation_runs.csv").read_text().splitlines()) == 3
