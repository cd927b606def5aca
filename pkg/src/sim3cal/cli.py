"""Command-line tool.

Subcommands::

    sim3cal simulate          --scene NAME|FILE --perturbation SPEC --seed N --out DIR
    sim3cal check-scene       --scene NAME|FILE [--out DIR]
    sim3cal calibrate         --cloud FILE --scene NAME|FILE --model sim3|bl1|bl2 --out DIR
    sim3cal validate          --result FILE --cloud FILE --scene NAME|FILE --out DIR
    sim3cal sweep-noise       --seed N --out DIR
    sim3cal sweep-orientation --count N --seed N --out DIR

Every subcommand accepts ``--config FILE``: a JSON object whose keys are flag
names (``range-sigma`` or ``range_sigma``). Values given on the command line
take precedence over the file, which takes precedence over built-in defaults.
Each run writes ``manifest.json`` (configuration, its hash, library versions
and the SHA-256 of every output file) next to its outputs.

Exit codes: 0 success, 2 validation or configuration error, 3 a solve was not
certified, 4 degenerate scene.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import itertools
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import experiments as ex
from . import io
from .cost import mean_abs_p2p, signed_residuals, thickness
from .errors import (ConfigError, DegenerateIntersection, EmptyInput, EmptyScene,
                     PlacementError, Sim3CalError)
from .liegroup import SimilarityTransform
from .parsing import Grid, PerArc, PerRing, collection_ids, parse, weighted_plane_fit
from .scene import (E3, Scene, common_point, degenerate_three_target_scene,
                    make_tetrahedron_scene, placement_report, validation_scene)
from .simulator import (NoPerturbation, Returns, SolidStateOPA, SpinningLidar,
                        SystematicLevel, lidar_from_id, random_bl1_perturbation,
                        random_bl2_perturbation, random_sim3_perturbation, scan_opa,
                        scan_spinning)
from .solvers import CalibrationResult, alternate_refine, calibrate, scale_profile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CERTIFIED = 3
EXIT_DEGENERATE = 4

BUILTIN_SCENES = ("tetrahedron", "degenerate", "two-target", "validation", "opa-train",
                  "opa-validation")
_DEFAULT_LIDAR = {"degenerate": "spinning1", "opa-train": "opa20x20",
                  "opa-validation": "opa20x20"}
_DEGENERATE_STATUS = ("scale_unidentifiable", "translation_unobservable")


# -- settings -------------------------------------------------------------------------


def _settings(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge built-in defaults, the ``--config`` file and explicit flags."""
    out = dict(defaults)
    if getattr(args, "config", None):
        raw = io.read_json(args.config)
        if not isinstance(raw, dict):
            raise ConfigError("the config file must hold a JSON object")
        for k, v in raw.items():
            key = k.replace("-", "_")
            if key not in defaults:
                raise ConfigError(f"unknown config key {k!r}; known: {sorted(defaults)}")
            out[key] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _require(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise ConfigError("missing required setting(s): "
                          + ", ".join("--" + k.replace("_", "-") for k in missing))


def _resolve_paths(settings: dict, keys) -> None:
    for k in keys:
        if settings.get(k) is not None and not _is_builtin(settings[k]):
            settings[k] = str(Path(settings[k]).resolve())


def _is_builtin(name) -> bool:
    return isinstance(name, str) and name in BUILTIN_SCENES


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _finish(out: Path, command: str, settings: dict, outputs: dict) -> None:
    io.write_json(out / "manifest.json", io.manifest(command, settings, outputs))


def _seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n)]


# -- scenes ---------------------------------------------------------------------------


def load_scene(spec: str, lidar_id: Optional[str] = None) -> tuple[Scene, bool]:
    """Built-in scene by name, or a scene JSON file.

    Returns:
        ``(scene, separately)``; ``separately`` means every target is
        scanned on its own (one wall seen in several poses).
    """
    if _is_builtin(spec):
        lid = lidar_from_id(lidar_id or _DEFAULT_LIDAR.get(spec, "spinning32"))
        if spec == "tetrahedron":
            return make_tetrahedron_scene(lidar=lid), False
        if spec == "degenerate":
            return degenerate_three_target_scene(lidar=lid)[0], False
        if spec == "two-target":
            sc = make_tetrahedron_scene(lidar=lid)
            return Scene(sc.targets[:2], lid, sc.ring_plane_normal), False
        if spec == "validation":
            return validation_scene(lidar=lid), False
        poses = ex.OpaConfig().train_poses if spec == "opa-train" else ex.OpaConfig().val_poses
        walls = tuple(ex.wall_target(d, yaw, pitch) for yaw, pitch, d in poses)
        return Scene(walls, lid), True
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"scene {spec!r} is neither a built-in {BUILTIN_SCENES} nor a file")
    raw = io.read_json(path)
    scene = io.scene_from_dict(raw)
    if lidar_id is not None:
        scene = scene.with_lidar(lidar_from_id(lidar_id))
    return scene, bool(raw.get("scan_targets_separately", False))


def _scene_dict(scene: Scene, separately: bool) -> dict:
    d = io.scene_to_dict(scene)
    if separately:
        d["scan_targets_separately"] = True
    return d


def _scan(scene: Scene, pert, seed: int, sigma: float, scans: int, separately: bool) -> Returns:
    lid = scene.lidar
    if lid is None:
        raise ConfigError("the scene has no LiDAR model; pass --lidar")

    def one(sc, s):
        if isinstance(lid, SolidStateOPA):
            return scan_opa(sc, lid, pert, s, sigma, scans)
        return scan_spinning(sc, lid, scans, pert, s, sigma)

    if not separately:
        return one(scene, seed)
    parts = []
    for k, t in enumerate(scene.targets):
        r = one(Scene((t,), lid, scene.ring_plane_normal), seed + k)
        parts.append(Returns(r.points, r.collection_id, np.full(len(r), k), r.scan))
    return Returns.concatenate(parts)


def _collection_count(lid) -> int:
    return lid.rows * lid.cols if isinstance(lid, SolidStateOPA) else lid.beam_count


def make_perturbation(spec: str, lidar, seed: int, settings: dict):
    """``none``, ``sim3``, ``bl1``, ``bl2``, ``systematic:LEVEL`` or a truth JSON file."""
    rng = np.random.default_rng(seed)
    if spec == "none":
        return NoPerturbation()
    if spec == "sim3":
        return random_sim3_perturbation(range(_collection_count(lidar)), rng,
                                        tuple(settings["scale_range"]),
                                        settings["max_angle_deg"], settings["max_translation"])
    if spec in ("bl1", "bl2"):
        if not isinstance(lidar, SpinningLidar):
            raise ConfigError(f"{spec} perturbations need a spinning LiDAR")
        return (random_bl1_perturbation if spec == "bl1" else random_bl2_perturbation)(lidar, rng)
    if spec.startswith("systematic:"):
        try:
            level = int(spec.split(":", 1)[1])
        except ValueError as e:
            raise ConfigError(f"bad systematic level in {spec!r}") from e
        if not 0 <= level <= 7:
            raise ConfigError("systematic level must be 0..7")
        return SystematicLevel(level, seed, settings["systematic_mode"])
    path = Path(spec)
    if path.exists():
        return io.perturbation_from_dict(io.read_json(path))
    raise ConfigError(f"unknown perturbation {spec!r}")


def parse_scheme(spec: str, lidar=None):
    """``ring``, ``arc[:N]``, ``grid:MxN`` (target frame) or ``grid:MxN:emitter``."""
    parts = spec.split(":")
    try:
        if parts[0] == "ring" and len(parts) == 1:
            return PerRing()
        if parts[0] == "arc" and len(parts) <= 2:
            return PerArc(int(parts[1]) if len(parts) == 2 else 4)
        if parts[0] == "grid" and len(parts) in (2, 3):
            m, n = (int(x) for x in parts[1].lower().split("x"))
            if len(parts) == 3:
                if parts[2] != "emitter":
                    raise ValueError
                if not isinstance(lidar, SolidStateOPA):
                    raise ConfigError("an emitter grid needs a solid-state LiDAR in the scene")
                return Grid(m, n, "emitter", (lidar.rows, lidar.cols))
            return Grid(m, n)
    except ValueError:
        pass
    raise ConfigError(f"bad scheme {spec!r}; use ring, arc[:N], grid:MxN or grid:MxN:emitter")


# -- simulate -------------------------------------------------------------------------

_SIMULATE_DEFAULTS = {
    "scene": "tetrahedron", "lidar": None, "perturbation": "sim3", "seed": None, "scans": 1,
    "range_sigma": 0.002, "out": None, "scale_range": [0.95, 1.05], "max_angle_deg": 2.0,
    "max_translation": 0.05, "systematic_mode": "range",
}


def cmd_simulate(args) -> int:
    st = _settings(args, _SIMULATE_DEFAULTS)
    _require(st, "seed", "out")
    _resolve_paths(st, ("scene", "out"))
    scene, separately = load_scene(st["scene"], st["lidar"])
    s_pert, s_scan = _seeds(st["seed"], 2)
    pert = make_perturbation(st["perturbation"], scene.lidar, s_pert, st)
    if st["scans"] < 1 or st["range_sigma"] < 0:
        raise ConfigError("scans must be >= 1 and range-sigma >= 0")
    returns = _scan(scene, pert, s_scan, float(st["range_sigma"]), int(st["scans"]), separately)
    out = _out_dir(st["out"])
    files = {"cloud": out / "cloud.csv", "truth": out / "truth.json", "scene": out / "scene.json"}
    io.write_cloud(files["cloud"], returns)
    io.write_json(files["truth"], io.perturbation_to_dict(pert))
    io.write_json(files["scene"], _scene_dict(scene, separately))
    _finish(out, "simulate", st, files)
    present = sorted(set(returns.target_id.tolist()))
    print(f"simulated {len(returns)} returns on targets {present} -> {out}")
    return EXIT_OK


# -- check-scene ----------------------------------------------------------------------

_CHECK_DEFAULTS = {"scene": "tetrahedron", "lidar": None, "out": None}


def check_scene(scene: Scene) -> tuple[dict, list]:
    """Placement report plus warnings; the report's ``status`` is ``ok`` or a flag."""
    targets = scene.targets
    rn = np.asarray(scene.ring_plane_normal, dtype=float)
    n = len(targets)
    warnings = []
    report = {"targets": n, "status": "ok"}
    if n < 3:
        report["status"] = "too_few_targets"
        warnings.append(f"{n} planar target(s) cannot determine a similarity transform; "
                        "the solution is not unique. Place four targets as a tetrahedron.")
    elif n == 3:
        report["status"] = "scale_unidentifiable"
        try:
            q0 = common_point(targets)
        except DegenerateIntersection:
            warnings.append("three targets whose planes do not meet in one point; "
                            "the solution is not unique. Place four targets.")
        else:
            report["q0"] = q0.tolist()
            report["q0_on_ring_plane"] = bool(abs(rn @ q0) <= 1e-9 * (1 + np.linalg.norm(q0)))
            warnings.append("ScaleUnidentifiable: with three targets any scaling about the common "
                            f"point q0 = ({q0[0]:.6g}, {q0[1]:.6g}, {q0[2]:.6g}) maps every "
                            "target plane onto itself. Add a fourth target.")
    else:
        subsets = []
        for idx in itertools.combinations(range(n), 4):
            rep = placement_report([targets[i] for i in idx], rn)
            subsets.append((idx, rep))
            if rep.ok:
                break
        idx, rep = next(((i, r) for i, r in subsets if r.ok), subsets[0])
        report.update(rep.to_dict())
        report["subset"] = list(idx)
        if not rep.ok:
            report["status"] = "placement_failed"
            failed = [name for name, ok in (("normal independence", rep.assumption_n_ok),
                                            ("intersection-pair independence",
                                             rep.assumption_b_ok)) if not ok]
            warnings.append("placement check failed: " + ", ".join(failed)
                            + ". Orient the targets as a tetrahedron.")
    return report, warnings


def cmd_check_scene(args) -> int:
    st = _settings(args, _CHECK_DEFAULTS)
    _resolve_paths(st, ("scene", "out"))
    scene, _ = load_scene(st["scene"], st["lidar"])
    report, warnings = check_scene(scene)
    for w in warnings:
        print("WARNING: " + w, file=sys.stderr)
    sys.stdout.write(io.dumps(report))
    if st["out"]:
        out = _out_dir(st["out"])
        io.write_json(out / "placement.json", report)
        _finish(out, "check-scene", st, {"placement": out / "placement.json"})
    return EXIT_OK if report["status"] == "ok" else EXIT_DEGENERATE


# -- calibrate ------------------------------------------------------------------------

_CALIBRATE_DEFAULTS = {
    "cloud": None, "scene": None, "lidar": None, "model": "sim3", "scheme": None, "out": None,
    "s_min": 0.8, "s_max": 1.2, "fit_targets": False, "target_width": None, "refine": False,
    "refine_tol": 1e-5, "refine_max_iter": 20, "truth": None,
}


def _fit_planes(returns: Returns, n: int) -> list:
    return [weighted_plane_fit(returns.points[returns.target_id == t]) for t in range(n)]


def truth_error(result: CalibrationResult, returns: Returns, truth) -> dict:
    """Mean displacement from the true points before and after calibration (Sim(3) truth)."""
    true = returns.points.copy()
    for k, h in truth.transforms.items():
        sel = returns.collection_id == k
        true[sel] = h.apply(true[sel])
    cal = result.apply(returns).points
    injected = float(np.linalg.norm(returns.points - true, axis=1).mean())
    left = float(np.linalg.norm(cal - true, axis=1).mean())
    return {"injected": injected, "remaining": left,
            "removed_fraction": 1.0 - left / injected if injected > 0 else float("nan")}


def exit_code_for(result: CalibrationResult) -> int:
    statuses = set(result.status.values())
    if statuses & set(_DEGENERATE_STATUS):
        return EXIT_DEGENERATE
    if "not_certified" in statuses:
        return EXIT_NOT_CERTIFIED
    return EXIT_OK


def cmd_calibrate(args) -> int:
    st = _settings(args, _CALIBRATE_DEFAULTS)
    _require(st, "cloud", "scene", "out")
    _resolve_paths(st, ("cloud", "scene", "out", "truth"))
    if st["model"] not in ("sim3", "bl1", "bl2"):
        raise ConfigError(f"unknown model {st['model']!r}")
    if not st["s_min"] < 1.0 < st["s_max"] or st["s_min"] <= 0:
        raise ConfigError("need 0 < s-min < 1 < s-max")
    scene, _ = load_scene(st["scene"], st["lidar"])
    returns = io.read_cloud(st["cloud"])
    if len(returns) == 0:
        raise EmptyInput("the cloud has no returns")
    default_scheme = ("grid:4x20:emitter" if isinstance(scene.lidar, SolidStateOPA) else "ring")
    scheme = parse_scheme(st["scheme"] or default_scheme, scene.lidar)
    n_targets = max(len(scene.targets), int(returns.target_id.max()) + 1)
    targets = _fit_planes(returns, n_targets) if st["fit_targets"] else scene.targets
    kw = {"s_range": (st["s_min"], st["s_max"])} if st["model"] == "sim3" else {}
    if st["refine"]:
        widths = st["target_width"]
        if widths is not None:
            from .parsing import estimate_targets_l1
            targets = estimate_targets_l1(returns, widths, n_targets)
        result = alternate_refine(returns, list(targets), st["model"], scheme, widths,
                                  tol=st["refine_tol"], max_iter=st["refine_max_iter"], **kw)
    else:
        cols = parse(returns, scheme, targets)
        result = calibrate(st["model"], cols, targets, **kw)
        result.scheme = scheme
    if st["truth"]:
        truth = io.perturbation_from_dict(io.read_json(st["truth"]))
        if getattr(truth, "kind", None) == "sim3" and isinstance(scheme, PerRing):
            result.residuals["truth"] = truth_error(result, returns, truth)
    cal = result.apply(returns, targets)
    result.residuals["training"] = {
        "uncalibrated_mean_abs_p2p": mean_abs_p2p(None, returns.points, returns.target_id,
                                                  targets),
        "calibrated_mean_abs_p2p": mean_abs_p2p(None, cal.points, cal.target_id, targets)}
    out = _out_dir(st["out"])
    path = out / "calibration.json"
    io.write_json(path, result.to_dict(timing=False))
    _finish(out, "calibrate", st, {"calibration": path})
    counts = {s: list(result.status.values()).count(s) for s in sorted(set(result.status.values()))}
    tr = result.residuals["training"]
    print(f"{st['model']}: {len(result.transforms)} collections {counts}; training mean |p2p| "
          f"{tr['uncalibrated_mean_abs_p2p']:.6g} -> {tr['calibrated_mean_abs_p2p']:.6g} m; "
          f"{result.wall_time:.2f} s")
    if "truth" in result.residuals:
        print(f"removed {100 * result.residuals['truth']['removed_fraction']:.2f}% "
              "of the injected displacement")
    return exit_code_for(result)


# -- validate -------------------------------------------------------------------------

_VALIDATE_DEFAULTS = {
    "result": None, "cloud": None, "scene": None, "lidar": None, "out": None, "bins": 50,
    "profile_cloud": None, "profile_scene": None, "profile_half_width": 0.05,
    "profile_points": 21,
}


def _metrics(points, tids, targets) -> dict:
    r = signed_residuals(points, tids, targets)
    th = {}
    for t in range(len(targets)):
        sel = tids == t
        if sel.any():
            th[str(t)] = thickness(points[sel], targets[t])
    return {"mean_abs_p2p": float(np.mean(np.abs(r))), "rms_p2p": float(np.sqrt(np.mean(r**2))),
            "max_abs_p2p": float(np.max(np.abs(r))), "thickness": th, "points": int(len(r))}


def validation_metrics(result: CalibrationResult, returns: Returns, targets) -> dict:
    """Uncalibrated vs calibrated point-to-plane statistics, overall and per collection."""
    cal = result.apply(returns, targets)
    before = _metrics(returns.points, returns.target_id, targets)
    after = _metrics(cal.points, cal.target_id, targets)
    ids = collection_ids(returns, result.scheme or PerRing(), targets)
    per = {}
    rb = np.abs(signed_residuals(returns.points, returns.target_id, targets))
    ra = np.abs(signed_residuals(cal.points, cal.target_id, targets))
    for k in np.unique(ids):
        sel = ids == k
        per[str(int(k))] = {"uncalibrated": float(rb[sel].mean()),
                            "calibrated": float(ra[sel].mean()), "points": int(sel.sum())}
    red = 1.0 - after["mean_abs_p2p"] / before["mean_abs_p2p"] if before["mean_abs_p2p"] else 0.0
    return {"uncalibrated": before, "calibrated": after, "reduction": red,
            "per_collection": per, "model": result.model}


def _histogram_csv(path: Path, before, after, bins: int) -> None:
    lim = float(max(np.abs(before).max(), np.abs(after).max(), 1e-12))
    edges = np.linspace(-lim, lim, bins + 1)
    hb, _ = np.histogram(before, edges)
    ha, _ = np.histogram(after, edges)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "uncalibrated", "calibrated"])
    for lo, hi, a, b in zip(edges[:-1], edges[1:], hb, ha):
        w.writerow([f"{lo:.9g}", f"{hi:.9g}", int(a), int(b)])
    path.write_text(buf.getvalue())


def _profile_csv(path: Path, result: CalibrationResult, returns: Returns, targets,
                 half_width: float, n: int) -> None:
    cols = parse(returns, result.scheme or PerRing(), targets)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["collection_id", "s", "f"])
    for c in cols:
        h = result.transforms.get(c.id)
        if not isinstance(h, SimilarityTransform):
            continue
        scales = np.linspace(h.s - half_width, h.s + half_width, n)
        try:
            f = scale_profile(c.points, c.target_ids, targets, scales)
        except Sim3CalError:
            continue
        for s, v in zip(scales, f):
            w.writerow([c.id, f"{s:.9g}", f"{v:.9g}"])
    path.write_text(buf.getvalue())


def cmd_validate(args) -> int:
    st = _settings(args, _VALIDATE_DEFAULTS)
    _require(st, "result", "cloud", "scene", "out")
    _resolve_paths(st, ("result", "cloud", "scene", "out", "profile_cloud", "profile_scene"))
    result = CalibrationResult.from_dict(io.read_json(st["result"]))
    scene, _ = load_scene(st["scene"], st["lidar"])
    returns = io.read_cloud(st["cloud"])
    if len(returns) == 0:
        raise EmptyInput("the cloud has no returns")
    targets = scene.targets
    if int(returns.target_id.max()) >= len(targets):
        raise ConfigError("the cloud refers to targets missing from the scene")
    metrics = validation_metrics(result, returns, targets)
    out = _out_dir(st["out"])
    files = {"metrics": out / "metrics.json", "residuals": out / "residual_histogram.csv"}
    io.write_json(files["metrics"], metrics)
    cal = result.apply(returns, targets)
    _histogram_csv(files["residuals"], signed_residuals(returns.points, returns.target_id, targets),
                   signed_residuals(cal.points, cal.target_id, targets), int(st["bins"]))
    if result.model == "sim3" and int(st["profile_points"]) > 1:
        if st["profile_cloud"]:
            p_ret = io.read_cloud(st["profile_cloud"])
            p_targets = load_scene(st["profile_scene"] or st["scene"], st["lidar"])[0].targets
        else:
            p_ret, p_targets = returns, targets
        files["scale_profile"] = out / "scale_profile.csv"
        _profile_csv(files["scale_profile"], result, p_ret, p_targets,
                     float(st["profile_half_width"]), int(st["profile_points"]))
    _finish(out, "validate", st, files)
    print(f"validation mean |p2p|: {metrics['uncalibrated']['mean_abs_p2p']:.6g} -> "
          f"{metrics['calibrated']['mean_abs_p2p']:.6g} m "
          f"({100 * metrics['reduction']:.1f}% reduction)")
    return EXIT_OK


# -- sweeps ---------------------------------------------------------------------------

_NOISE_DEFAULTS = {"seed": None, "levels": "0-7", "models": "sim3,bl1,bl2",
                   "mode": "offset", "out": None}
_LABELS = {"uncalibrated": "Uncalibrated", "sim3": "Sim3", "bl1": "BL1", "bl2": "BL2"}


def _levels(spec) -> list:
    if isinstance(spec, list):
        levels = [int(x) for x in spec]
    elif "-" in str(spec):
        a, b = (int(x) for x in str(spec).split("-"))
        levels = list(range(a, b + 1))
    else:
        levels = [int(x) for x in str(spec).split(",")]
    if not levels or any(not 0 <= x <= 7 for x in levels):
        raise ConfigError("levels must lie in 0..7")
    return levels


def _strip_timing(rows: list) -> list:
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]


def format_noise_table(table: dict) -> str:
    """CSV with one row per method and one column per noise level."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + [f"Noise {lv}" for lv in table["levels"]])
    for key in ["uncalibrated"] + [k for k in table if k not in ("levels", "uncalibrated")]:
        w.writerow([_LABELS.get(key, key)] + [f"{v:.6g}" for v in table[key]])
    return buf.getvalue()


def cmd_sweep_noise(args) -> int:
    st = _settings(args, _NOISE_DEFAULTS)
    _require(st, "seed", "out")
    _resolve_paths(st, ("out",))
    models = tuple(m.strip() for m in str(st["models"]).split(",") if m.strip())
    if any(m not in ("sim3", "bl1", "bl2") for m in models) or not models:
        raise ConfigError(f"bad model list {st['models']!r}")
    if st["mode"] not in ("offset", "range"):
        raise ConfigError("mode must be offset or range")
    rows = ex.sweep_noise(int(st["seed"]), _levels(st["levels"]), models, st["mode"])
    table = ex.noise_table(rows)
    out = _out_dir(st["out"])
    files = {"table": out / "noise_table.csv", "runs": out / "runs.json"}
    files["table"].write_text(format_noise_table(table))
    io.write_json(files["runs"], _strip_timing(rows))
    _finish(out, "sweep-noise", st, files)
    sys.stdout.write(files["table"].read_text())
    return EXIT_OK


_ORIENT_DEFAULTS = {"seed": None, "count": 200, "out": None}


def cmd_sweep_orientation(args) -> int:
    st = _settings(args, _ORIENT_DEFAULTS)
    _require(st, "seed", "out")
    _resolve_paths(st, ("out",))
    if int(st["count"]) < 1:
        raise ConfigError("count must be positive")

    def progress(i, row):
        print(f"[{i}/{st['count']}] condition {row['max_basis_condition']:.3g} "
              f"reduction {100 * row['reduction']['sim3']:.1f}%", file=sys.stderr, flush=True)

    rows = ex.sweep_orientation(int(st["count"]), int(st["seed"]), progress=progress)
    summary = ex.orientation_summary(rows)
    out = _out_dir(st["out"])
    files = {"runs": out / "orientation_runs.csv", "summary": out / "summary.json"}
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "max_basis_condition", "uncalibrated", "calibrated", "reduction", "status"])
    for i, r in enumerate(rows):
        w.writerow([i, f"{r['max_basis_condition']:.9g}", f"{r['uncalibrated']:.9g}",
                    f"{r['calibrated']['sim3']:.9g}", f"{r['reduction']['sim3']:.9g}",
                    "|".join(r["status"]["sim3"])])
    files["runs"].write_text(buf.getvalue())
    io.write_json(files["summary"], summary)
    _finish(out, "sweep-orientation", st, files)
    print(f"{summary['runs']} orientations: mean P2P improvement "
          f"{100 * summary['mean_reduction']:.2f}% (min {100 * summary['min_reduction']:.2f}%), "
          f"correlation with basis condition number r = {summary['pearson_r']:.3f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim3cal", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {io_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of settings (flag names as keys)")
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a scan and write cloud, truth and scene files")
    sp.add_argument("--scene", help=f"built-in {BUILTIN_SCENES} or scene JSON")
    sp.add_argument("--lidar", help="LiDAR preset id (spinning32, spinning1, opa20x20, ...)")
    sp.add_argument("--perturbation",
                    help="none | sim3 | bl1 | bl2 | systematic:LEVEL | truth JSON file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scans", type=int)
    sp.add_argument("--range-sigma", type=float)
    sp.add_argument("--systematic-mode", choices=("range", "offset"))
    sp.add_argument("--out")

    sp = add("check-scene", cmd_check_scene, "run the target placement checks")
    sp.add_argument("--scene")
    sp.add_argument("--lidar")
    sp.add_argument("--out")

    sp = add("calibrate", cmd_calibrate, "calibrate from a point cloud and target planes")
    sp.add_argument("--cloud")
    sp.add_argument("--scene", help="scene with the target planes")
    sp.add_argument("--lidar")
    sp.add_argument("--model", choices=("sim3", "bl1", "bl2"))
    sp.add_argument("--scheme", help="ring | arc[:N] | grid:MxN | grid:MxN:emitter")
    sp.add_argument("--s-min", type=float)
    sp.add_argument("--s-max", type=float)
    sp.add_argument("--fit-targets", action="store_const", const=True,
                    help="estimate target planes from the cloud instead of the scene")
    sp.add_argument("--target-width", type=float, help="target side for the vertex fit")
    sp.add_argument("--refine", action="store_const", const=True,
                    help="alternate calibration and target re-estimation")
    sp.add_argument("--refine-tol", type=float)
    sp.add_argument("--refine-max-iter", type=int)
    sp.add_argument("--truth", help="ground-truth JSON from simulate (reports recovery)")
    sp.add_argument("--out")

    sp = add("validate", cmd_validate, "apply a calibration to a validation cloud")
    sp.add_argument("--result")
    sp.add_argument("--cloud")
    sp.add_argument("--scene")
    sp.add_argument("--lidar")
    sp.add_argument("--bins", type=int)
    sp.add_argument("--profile-cloud", help="cloud for the s vs f(s) profile (default: --cloud)")
    sp.add_argument("--profile-scene")
    sp.add_argument("--profile-half-width", type=float)
    sp.add_argument("--profile-points", type=int, help="0 skips the profile")
    sp.add_argument("--out")

    sp = add("sweep-noise", cmd_sweep_noise, "validation P2P per systematic-noise level")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--levels", help="e.g. 0-7 or 0,3,7")
    sp.add_argument("--models", help="comma list of sim3, bl1, bl2")
    sp.add_argument("--mode", choices=("offset", "range"))
    sp.add_argument("--out")

    sp = add("sweep-orientation", cmd_sweep_orientation,
             "calibrate over random tetrahedron orientations")
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    return p


def io_version() -> str:
    from . import __version__
    return __version__


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except PlacementError as e:
        print(f"error: degenerate scene: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigError, EmptyInput, EmptyScene, KeyError, ValueError,
            FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
