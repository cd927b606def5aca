"""Plain-text file formats: point clouds (CSV), scenes, ground truth and results (JSON)."""

from __future__ import annotations

import hashlib
import json
import platform
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import ConfigError
from .liegroup import SimilarityTransform
from .models import Bl1Params, Bl2Params
from .scene import E3, PlanarTarget, Scene
from .simulator import (Bl1Perturbation, Bl2Perturbation, NoPerturbation, Returns,
                        Sim3Perturbation, SystematicLevel, lidar_from_dict, lidar_from_id)

PathLike = Union[str, Path]
CSV_HEADER = "collection_id,target_id,x,y,z"
SCENE_FORMAT = "scene_v1"
TRUTH_FORMAT = "ptruth_v1"


# -- point clouds ---------------------------------------------------------------------


def format_cloud(returns: Returns) -> str:
    """CSV text with 9 significant digits per coordinate."""
    lines = [CSV_HEADER]
    for c, t, p in zip(returns.collection_id, returns.target_id, returns.points):
        lines.append(f"{c},{t},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g}")
    return "\n".join(lines) + "\n"


def write_cloud(path: PathLike, returns: Returns) -> None:
    Path(path).write_text(format_cloud(returns))


def read_cloud(path: PathLike) -> Returns:
    """Read a point-cloud CSV written by :func:`write_cloud`."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    if header != CSV_HEADER:
        raise ConfigError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
    with warnings.catch_warnings():
        # an empty body is a valid (empty) cloud
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return Returns(np.zeros((0, 3)), [], [])
    if data.shape[1] != 5:
        raise ConfigError(f"{path}: expected 5 columns")
    return Returns(data[:, 2:5], data[:, 0].astype(int), data[:, 1].astype(int))


# -- scenes ---------------------------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    lid = scene.lidar
    d = {"format": SCENE_FORMAT,
         "targets": [t.to_dict() for t in scene.targets],
         "ring_plane_normal": np.asarray(scene.ring_plane_normal).tolist()}
    if lid is not None:
        d["lidar"] = lid.to_dict()
    return d


def scene_from_dict(d: dict) -> Scene:
    """Build a Scene; target normals and anchors are derived from vertices if absent."""
    if d.get("format", SCENE_FORMAT) != SCENE_FORMAT:
        raise ConfigError(f"unsupported scene format {d.get('format')!r}")
    if not d.get("targets"):
        raise ConfigError("scene has no targets")
    targets = []
    for t in d["targets"]:
        verts = np.asarray(t["vertices"], dtype=float)
        if "normal" in t and "anchor" in t:
            targets.append(PlanarTarget(verts, np.asarray(t["normal"], float),
                                        np.asarray(t["anchor"], float)))
        else:
            targets.append(PlanarTarget.from_vertices(verts))
    lid = d.get("lidar")
    if isinstance(lid, str):
        lid = lidar_from_id(lid)
    elif isinstance(lid, dict):
        lid = lidar_from_dict(lid)
    return Scene(tuple(targets), lid, np.asarray(d.get("ring_plane_normal", E3), float))


def write_scene(path: PathLike, scene: Scene) -> None:
    write_json(path, scene_to_dict(scene))


def read_scene(path: PathLike) -> Scene:
    return scene_from_dict(read_json(path))


# -- ground truth ---------------------------------------------------------------------


def perturbation_to_dict(p) -> dict:
    out = {"format": TRUTH_FORMAT, "kind": getattr(p, "kind", "none")}
    if isinstance(p, Sim3Perturbation):
        out["collections"] = {str(k): h.to_dict() for k, h in sorted(p.transforms.items())}
    elif isinstance(p, (Bl1Perturbation, Bl2Perturbation)):
        out["collections"] = {str(k): a.to_dict() for k, a in sorted(p.params.items())}
    elif isinstance(p, SystematicLevel):
        out.update(level=p.level, seed=p.seed, mode=p.mode)
    return out


def perturbation_from_dict(d: dict):
    if d.get("format", TRUTH_FORMAT) != TRUTH_FORMAT:
        raise ConfigError(f"unsupported truth format {d.get('format')!r}")
    kind = d.get("kind", "none")
    cols = d.get("collections", {})
    if kind == "sim3":
        return Sim3Perturbation({int(k): SimilarityTransform.from_dict(v) for k, v in cols.items()})
    if kind == "bl1":
        return Bl1Perturbation({int(k): Bl1Params(**v) for k, v in cols.items()})
    if kind == "bl2":
        return Bl2Perturbation({int(k): Bl2Params(**v) for k, v in cols.items()})
    if kind == "systematic":
        return SystematicLevel(int(d["level"]), int(d.get("seed", 0)), d.get("mode", "range"))
    if kind == "none":
        return NoPerturbation()
    raise ConfigError(f"unknown perturbation kind {kind!r}")


# -- json helpers ---------------------------------------------------------------------


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    return json.dumps(obj, default=_default, sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path: PathLike) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()


def manifest(command: str, config: dict, outputs: Optional[dict] = None) -> dict:
    """Reproducibility record: configuration, its hash, versions and output digests."""
    import scipy

    from . import __version__

    out = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "versions": {"sim3cal": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    }
    if outputs:
        out["outputs"] = {name: hashlib.sha256(Path(p).read_bytes()).hexdigest()
                          for name, p in sorted(outputs.items())}
    return out
