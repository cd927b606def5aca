"""Scripted end-to-end runs shared by the command-line tool, demos and tests.

Every run is a pure function of its arguments and an integer seed; sub-seeds
are derived with :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost import mean_abs_p2p
from .errors import PlacementError
from .liegroup import Rotation
from .parsing import Grid, PerRing, parse, weighted_plane_fit
from .scene import (PlanarTarget, Scene, face_elevations, make_tetrahedron_scene,
                    placement_report, random_tetrahedron_orientation, validation_scene)
from .simulator import (Sim3Perturbation, lidar_from_id, random_sim3_perturbation,
                        inject_systematic, scan_opa, scan_spinning)
from .solvers import calibrate


@dataclass
class TetraConfig:
    """Settings of a tetrahedron calibration run (lengths in m, angles in degrees)."""

    lidar: str = "spinning32"
    radius: float = 3.0
    scale_range: tuple = (0.95, 1.05)
    max_angle_deg: float = 2.0
    max_translation: float = 0.05
    range_sigma: float = 0.002
    scans: int = 1
    validation_targets: int = 24
    validation_seed: int = 7
    max_face_elevation_deg: float = 50.0


def _seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def removed_fraction(result, measured, perturbation: Sim3Perturbation) -> float:
    """Share of the injected displacement that the calibration removes.

    For Sim(3) truth ``H`` the true point of a measurement ``x`` is ``H x``;
    the injected error is ``|x - H x|`` and what remains is ``|H_est x - H x|``.
    Use noise-free measurements.
    """
    truth = measured.points.copy()
    for k, h in perturbation.transforms.items():
        sel = measured.collection_id == k
        truth[sel] = h.apply(truth[sel])
    cal = result.apply(measured).points
    injected = np.linalg.norm(measured.points - truth, axis=1).mean()
    left = np.linalg.norm(cal - truth, axis=1).mean()
    return float(1.0 - left / injected)


def tetrahedron_run(seed: int, orientation: Optional[Rotation] = None,
                    models: Sequence[str] = ("sim3",), config: Optional[TetraConfig] = None,
                    systematic_level: int = 0, systematic_mode: str = "offset") -> dict:
    """Simulate, calibrate on a tetrahedron and validate on a cluttered scene.

    Each ring gets a random Sim(3) perturbation; optionally a systematic error
    of the given level is added on top. Calibration uses the true target
    planes. Validation uses a separate 24-target scene scanned with the same
    perturbation (and systematic error) and fresh noise.

    Returns:
        dict with ``uncalibrated`` and per-model ``calibrated`` validation
        mean absolute point-to-plane distances, ``reduction`` per model,
        ``removed_fraction`` (Sim(3) only, noise-free validation scan without
        systematic error), the placement report's basis condition numbers,
        collection statuses and timings.
    """
    cfg = config or TetraConfig()
    s_pert, s_train, s_val, s_sys, s_clean = _seeds(seed, 5)
    lid = lidar_from_id(cfg.lidar)
    scene = make_tetrahedron_scene(cfg.radius, orientation, lidar=lid)
    report = placement_report(scene.targets)
    pert = random_sim3_perturbation(range(lid.beam_count), np.random.default_rng(s_pert),
                                    cfg.scale_range, cfg.max_angle_deg, cfg.max_translation)
    train = scan_spinning(scene, lid, cfg.scans, pert, s_train, cfg.range_sigma)
    vscene = validation_scene(cfg.validation_targets, cfg.validation_seed, lid)
    val = scan_spinning(vscene, lid, 1, pert, s_val, cfg.range_sigma)
    if systematic_level:
        train = inject_systematic(train, systematic_level, s_sys, systematic_mode)
        val = inject_systematic(val, systematic_level, s_sys, systematic_mode)
    cols = parse(train, PerRing())
    uncal = mean_abs_p2p(None, val.points, val.target_id, vscene.targets)
    out = {"seed": seed, "uncalibrated": uncal, "calibrated": {}, "reduction": {},
           "status": {}, "wall_time": {}, "systematic_level": systematic_level,
           "basis_condition_numbers": report.basis_condition_numbers,
           "max_basis_condition": float(max(report.basis_condition_numbers, default=np.inf)),
           "placement_ok": report.ok,
           "orientation": None if orientation is None else orientation.m.tolist()}
    for model in models:
        t0 = time.perf_counter()
        res = calibrate(model, cols, scene.targets)
        res.scheme = PerRing()
        out["wall_time"][model] = time.perf_counter() - t0
        cal = res.apply(val)
        c = mean_abs_p2p(None, cal.points, cal.target_id, vscene.targets)
        out["calibrated"][model] = c
        out["reduction"][model] = 1.0 - c / uncal
        out["status"][model] = sorted(set(res.status.values()))
        if model == "sim3":
            clean = scan_spinning(vscene, lid, 1, pert, s_clean, 0.0)
            out["removed_fraction"] = removed_fraction(res, clean, pert)
            out["certified"] = all(cert.valid for cert in res.certificates.values())
    return out


def sweep_orientation(n: int, seed: int, config: Optional[TetraConfig] = None,
                      progress=None) -> list:
    """``n`` tetrahedron runs at random orientations (Sim(3) only).

    Orientations whose faces tilt more than ``max_face_elevation_deg`` from
    vertical are rejected, as are ones the scene builder cannot serve.
    """
    cfg = config or TetraConfig()
    rng = np.random.default_rng(seed)
    rows, rejected = [], 0
    run_seeds = iter(_seeds(seed + 1, 10 * n + 10))
    while len(rows) < n:
        r = random_tetrahedron_orientation(rng, np.deg2rad(cfg.max_face_elevation_deg))
        try:
            row = tetrahedron_run(next(run_seeds), r, ("sim3",), cfg)
        except PlacementError:
            rejected += 1
            continue
        row["face_elevations_deg"] = np.rad2deg(face_elevations(r)).tolist()
        row["rejected_before"] = rejected
        rows.append(row)
        if progress:
            progress(len(rows), row)
    return rows


def orientation_summary(rows) -> dict:
    """Correlation of validation improvement with basis condition number."""
    red = np.array([r["reduction"]["sim3"] for r in rows])
    cond = np.array([r["max_basis_condition"] for r in rows])
    ok = np.isfinite(cond)
    r_raw = float(np.corrcoef(cond[ok], red[ok])[0, 1]) if ok.sum() > 2 else float("nan")
    r_log = float(np.corrcoef(np.log10(cond[ok]), red[ok])[0, 1]) if ok.sum() > 2 else float("nan")
    return {"runs": len(rows), "mean_reduction": float(red.mean()),
            "min_reduction": float(red.min()), "pearson_r": r_raw, "pearson_r_log10": r_log}


def factory_config() -> TetraConfig:
    """A nearly calibrated sensor: small residual Sim(3) error per ring.

    Used by the systematic-noise sweep so that the injected systematic error
    dominates the uncalibrated error, as for a factory-calibrated unit.
    """
    return TetraConfig(scale_range=(0.998, 1.002), max_angle_deg=0.1, max_translation=0.003)


def sweep_noise(seed: int, levels: Sequence[int] = range(8), models=("sim3", "bl1", "bl2"),
                mode: str = "offset", config: Optional[TetraConfig] = None) -> list:
    """Validation P2P per systematic-noise level (same scene and seeds at every level).

    Defaults to :func:`factory_config`.
    """
    cfg = config or factory_config()
    return [tetrahedron_run(seed, None, models, cfg, level, mode) for level in levels]


def noise_table(rows) -> dict:
    """Columns ``Noise 0 .. Noise 7`` and rows uncalibrated / per model."""
    table = {"levels": [r["systematic_level"] for r in rows],
             "uncalibrated": [r["uncalibrated"] for r in rows]}
    for m in rows[0]["calibrated"]:
        table[m] = [r["calibrated"][m] for r in rows]
    return table


# -- solid state ----------------------------------------------------------------------


@dataclass
class OpaConfig:
    lidar: str = "opa20x20"
    # 4 column groups x 20 rows: each cell is a horizontal fan of 5 emitters
    grid: tuple = (4, 20)
    # (yaw deg, pitch deg, distance m); distinct distances keep the planes
    # from sharing a common point, which would leave scale unidentifiable.
    # Yaw stays small so that the outermost emitters (80 deg) still hit the wall,
    # and differs between poses so no two walls meet a horizontal fan in
    # parallel lines.
    train_poses: tuple = ((0.0, 0.0, 2.0), (8.0, 20.0, 2.6), (-8.0, 20.0, 1.7),
                          (4.0, -25.0, 3.1))
    val_poses: tuple = ((5.0, -8.0, 2.3), (-5.0, -12.0, 2.8), (6.0, 15.0, 1.9),
                        (-6.0, 10.0, 2.5))
    # "truth" uses the simulated planes, "wls" fits them to the training returns
    planes: str = "wls"
    range_sigma: float = 0.001
    scans: int = 10


def wall_target(distance: float, yaw_deg: float, pitch_deg: float,
                half_width: float = 40.0) -> PlanarTarget:
    """A large square wall in front of the sensor (+y), turned by yaw and pitch."""
    n = Rotation.from_axis_angle([0, 0, 1], np.deg2rad(yaw_deg)).m @ \
        Rotation.from_axis_angle([1, 0, 0], np.deg2rad(pitch_deg)).m @ np.array([0.0, -1.0, 0.0])
    return PlanarTarget.square(np.array([0.0, distance, 0.0]), n, 2 * half_width)


def opa_pose_returns(model, poses, seed: int, sigma: float, scans: int = 1):
    """Scan one wall in each pose separately and merge the returns.

    Returns:
        ``(returns, targets)``; the target id of a return is its pose index.
    """
    from .simulator import Returns

    parts, targets = [], []
    for k, (yaw, pitch, distance) in enumerate(poses):
        sc = Scene((wall_target(distance, yaw, pitch),), model)
        r = scan_opa(sc, model, None, seed + k, sigma, scans)
        parts.append(Returns(r.points, r.collection_id, np.full(len(r), k), r.scan))
        targets.append(sc.targets[0])
    return Returns.concatenate(parts), targets


def opa_run(seed: int, config: Optional[OpaConfig] = None) -> dict:
    """Calibrate a warped-wafer OPA on one wall seen in several poses.

    Each pose is scanned separately; its returns are labelled with the pose
    index as target id. Collections are emitter-grid cells.
    """
    cfg = config or OpaConfig()
    model = lidar_from_id(cfg.lidar)
    s_train, s_val = _seeds(seed, 2)
    train, ttargets = opa_pose_returns(model, cfg.train_poses, s_train, cfg.range_sigma,
                                       cfg.scans)
    val, vtargets = opa_pose_returns(model, cfg.val_poses, s_val, cfg.range_sigma, 1)
    scheme = Grid(cfg.grid[0], cfg.grid[1], frame="emitter",
                  array_shape=(model.rows, model.cols))
    cols = parse(train, scheme)
    t0 = time.perf_counter()
    if cfg.planes == "wls":
        ttargets = [weighted_plane_fit(train.points[train.target_id == k])
                    for k in range(len(ttargets))]
    elif cfg.planes != "truth":
        raise ValueError(f"unknown plane source {cfg.planes!r}")
    res = calibrate("sim3", cols, ttargets)
    res.scheme = scheme
    wall = time.perf_counter() - t0
    cal = res.apply(val)
    uncal = mean_abs_p2p(None, val.points, val.target_id, vtargets)
    c = mean_abs_p2p(None, cal.points, cal.target_id, vtargets)
    return {"seed": seed, "uncalibrated": uncal, "calibrated": c, "reduction": 1.0 - c / uncal,
            "collections": len(cols), "status": sorted(set(res.status.values())),
            "wall_time": wall, "config": asdict(cfg)}
