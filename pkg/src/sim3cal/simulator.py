"""Ray-cast simulation of spinning and solid-state (OPA) LiDARs on planar targets.

Rays are intersected with every target plane, accepted when the hit lies
inside the target polygon (winding number), and the nearest accepted hit
along each ray wins. Returns are ordered by scan, then beam (or emitter
row), then azimuth (or emitter column).

Perturbations describe how the physical sensor differs from its nominal
model; the simulator traces the physical rays and reports what the sensor
would measure, so the matching calibration model maps measurements back to
the true hit points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import EmptyScene
from .liegroup import Rotation, SimilarityTransform, spherical_to_cartesian
from .models import Bl1Params, Bl2Params

PARALLEL_TOL = 1e-12


# -- LiDAR models ---------------------------------------------------------------


@dataclass(frozen=True)
class SpinningLidar:
    """Multi-beam spinning LiDAR.

    Attributes:
        elevations: nominal elevation of each beam (rad).
        azimuth_step: angular step of the head between firings (rad).
        azimuth_offset: azimuth of the first firing (rad).
    """

    elevations: tuple
    azimuth_step: float
    azimuth_offset: float = 0.0
    model_id: str = "spinning"

    def __post_init__(self):
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        if len(self.elevations) < 1:
            raise ValueError("at least one beam is required")
        if not self.azimuth_step > 0:
            raise ValueError("azimuth step must be positive")

    @classmethod
    def uniform(cls, beams: int = 32, lowest_deg: float = -25.0, highest_deg: float = 15.0,
                azimuth_step_deg: float = 0.4, model_id: Optional[str] = None) -> "SpinningLidar":
        el = np.deg2rad(np.linspace(lowest_deg, highest_deg, beams)) if beams > 1 \
            else np.deg2rad([0.5 * (lowest_deg + highest_deg)])
        return cls(tuple(el), np.deg2rad(azimuth_step_deg),
                   model_id=model_id or f"spinning{beams}")

    @property
    def beam_count(self) -> int:
        return len(self.elevations)

    def azimuths(self) -> np.ndarray:
        n = int(round(2 * np.pi / self.azimuth_step))
        az = self.azimuth_offset + self.azimuth_step * np.arange(n)
        return np.angle(np.exp(1j * az)) if n else az

    def to_dict(self) -> dict:
        return {"kind": "spinning", "model_id": self.model_id,
                "elevations": list(self.elevations), "azimuth_step": self.azimuth_step,
                "azimuth_offset": self.azimuth_offset}


@dataclass(frozen=True)
class SolidStateOPA:
    """Optical phased array: a rows x cols grid of fixed emitters.

    Nominal emitter directions are uniform in azimuth over the horizontal
    field of view and in elevation over the vertical one, with the array
    facing +y. The wafer carrying the emitters may be warped: the height
    field ``z(x, y) = sum c_mn x^m y^n`` over normalised array coordinates
    ``x, y`` in [-1, 1] deflects each emitter by its local slope, so the
    true azimuth is ``phi + dz/dx`` and the true elevation ``theta + dz/dy``
    (radians).

    Attributes:
        warp: tuple of ``((m, n), c_mn)`` with ``m + n <= 3``.
    """

    rows: int = 20
    cols: int = 20
    hfov_deg: float = 160.0
    vfov_deg: float = 40.0
    warp: tuple = ()
    model_id: str = "opa"

    def __post_init__(self):
        if not (0 < self.hfov_deg < 180 and 0 < self.vfov_deg < 180):
            raise ValueError("fields of view must be within (0, 180) degrees")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("the emitter grid must be non-empty")
        warp = tuple(((int(m), int(n)), float(c)) for (m, n), c in self.warp)
        for (m, n), _ in warp:
            if m < 0 or n < 0 or m + n > 3:
                raise ValueError("warp terms must have degree <= 3")
        object.__setattr__(self, "warp", warp)

    def grid_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalised array coordinates, each ``(rows, cols)``."""
        x = np.linspace(-1.0, 1.0, self.cols) if self.cols > 1 else np.zeros(1)
        y = np.linspace(-1.0, 1.0, self.rows) if self.rows > 1 else np.zeros(1)
        return np.meshgrid(x, y)

    def warp_height(self, x, y) -> np.ndarray:
        z = np.zeros_like(np.asarray(x, dtype=float))
        for (m, n), c in self.warp:
            z = z + c * x**m * y**n
        return z

    def warp_slope(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        dx = np.zeros_like(np.asarray(x, dtype=float))
        dy = np.zeros_like(dx)
        for (m, n), c in self.warp:
            if m:
                dx = dx + c * m * x ** (m - 1) * y**n
            if n:
                dy = dy + c * n * x**m * y ** (n - 1)
        return dx, dy

    def angles(self, warped: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Elevation and azimuth of every emitter, each ``(rows, cols)``."""
        x, y = self.grid_coords()
        phi = x * np.deg2rad(self.hfov_deg) / 2
        theta = y * np.deg2rad(self.vfov_deg) / 2
        if warped and self.warp:
            dx, dy = self.warp_slope(x, y)
            phi, theta = phi + dx, theta + dy
        return theta, phi

    def directions(self, warped: bool = True) -> np.ndarray:
        """Unit emitter directions ``(rows * cols, 3)``, row-major."""
        theta, phi = self.angles(warped)
        return spherical_to_cartesian(1.0, theta.ravel(), phi.ravel())

    def emitter_row_col(self, emitter_id) -> tuple[np.ndarray, np.ndarray]:
        e = np.asarray(emitter_id)
        return e // self.cols, e % self.cols

    def to_dict(self) -> dict:
        return {"kind": "opa", "model_id": self.model_id, "rows": self.rows, "cols": self.cols,
                "hfov_deg": self.hfov_deg, "vfov_deg": self.vfov_deg,
                "warp": [[m, n, c] for (m, n), c in self.warp]}


def default_warp(amplitude: float = 0.01) -> tuple:
    """A bowl-plus-twist wafer shape scaled by ``amplitude`` (rad of slope)."""
    shape = {(2, 0): 1.0, (0, 2): 0.7, (1, 1): 0.5, (3, 0): 0.3, (1, 2): -0.4}
    return tuple((k, amplitude * c) for k, c in shape.items())


LidarModel = Union[SpinningLidar, SolidStateOPA]

_PRESETS = {
    "spinning32": lambda: SpinningLidar.uniform(32, model_id="spinning32"),
    "spinning1": lambda: SpinningLidar.uniform(1, 0.0, 0.0, model_id="spinning1"),
    "opa20x20": lambda: SolidStateOPA(20, 20, 160.0, 40.0, default_warp(0.01), "opa20x20"),
    "opa20x20-flat": lambda: SolidStateOPA(20, 20, 160.0, 40.0, (), "opa20x20-flat"),
}


def lidar_from_id(model_id: str) -> LidarModel:
    """Preset LiDAR by id: ``spinning32``, ``spinning1``, ``opa20x20``, ``opa20x20-flat``."""
    if model_id not in _PRESETS:
        raise KeyError(f"unknown lidar model id {model_id!r}; known: {sorted(_PRESETS)}")
    return _PRESETS[model_id]()


def lidar_from_dict(d: dict) -> LidarModel:
    if d.get("kind") == "spinning":
        return SpinningLidar(tuple(d["elevations"]), d["azimuth_step"],
                             d.get("azimuth_offset", 0.0), d.get("model_id", "spinning"))
    if d.get("kind") == "opa":
        warp = tuple(((m, n), c) for m, n, c in d.get("warp", []))
        return SolidStateOPA(d["rows"], d["cols"], d["hfov_deg"], d["vfov_deg"], warp,
                             d.get("model_id", "opa"))
    raise KeyError(f"unknown lidar kind {d.get('kind')!r}")


# -- perturbations ------------------------------------------------------------------


@dataclass(frozen=True)
class NoPerturbation:
    kind: str = "none"


@dataclass(frozen=True)
class Bl1Perturbation:
    """Per-collection 3-parameter truth; ``dtheta`` is the true beam elevation."""

    params: Mapping[int, Bl1Params]
    kind: str = "bl1"


@dataclass(frozen=True)
class Bl2Perturbation:
    """Per-collection 6-parameter truth; ``dtheta`` is the true beam elevation."""

    params: Mapping[int, Bl2Params]
    kind: str = "bl2"


@dataclass(frozen=True)
class Sim3Perturbation:
    """Per-collection similarity transforms ``H``; measurements are ``H^-1 x``."""

    transforms: Mapping[int, SimilarityTransform]
    kind: str = "sim3"


@dataclass(frozen=True)
class SystematicLevel:
    """Systematic error of ``0.01 * level`` m per collection (see :func:`inject_systematic`)."""

    level: int
    seed: int = 0
    mode: str = "range"
    kind: str = "systematic"


PerturbationSpec = Union[NoPerturbation, Bl1Perturbation, Bl2Perturbation, Sim3Perturbation,
                         SystematicLevel]


def random_sim3_perturbation(ids: Sequence[int], rng: np.random.Generator,
                             scale_range=(0.95, 1.05), max_angle_deg: float = 2.0,
                             max_translation: float = 0.05) -> Sim3Perturbation:
    """Independent random similarity transform per collection id."""
    out = {}
    for i in ids:
        axis = rng.standard_normal(3)
        ang = np.deg2rad(rng.uniform(0.0, max_angle_deg))
        out[int(i)] = SimilarityTransform(
            rng.uniform(*scale_range), Rotation.from_axis_angle(axis, ang),
            rng.uniform(-max_translation, max_translation, 3))
    return Sim3Perturbation(out)


def random_bl1_perturbation(model: SpinningLidar, rng: np.random.Generator,
                            drho=0.05, dtheta_deg=0.3, dphi_deg=0.5) -> Bl1Perturbation:
    out = {}
    for k, el in enumerate(model.elevations):
        out[k] = Bl1Params(rng.uniform(-drho, drho),
                           el + np.deg2rad(rng.uniform(-dtheta_deg, dtheta_deg)),
                           np.deg2rad(rng.uniform(-dphi_deg, dphi_deg)))
    return Bl1Perturbation(out)


def random_bl2_perturbation(model: SpinningLidar, rng: np.random.Generator,
                            drho=0.05, dtheta_deg=0.3, dphi_deg=0.5, ds=0.02, dh=0.03,
                            dv=0.03) -> Bl2Perturbation:
    out = {}
    for k, el in enumerate(model.elevations):
        out[k] = Bl2Params(rng.uniform(-drho, drho),
                           el + np.deg2rad(rng.uniform(-dtheta_deg, dtheta_deg)),
                           np.deg2rad(rng.uniform(-dphi_deg, dphi_deg)),
                           1.0 + rng.uniform(-ds, ds), rng.uniform(-dh, dh),
                           rng.uniform(-dv, dv))
    return Bl2Perturbation(out)


# -- returns container --------------------------------------------------------------


@dataclass(frozen=True)
class LabeledReturn:
    point: np.ndarray
    collection_id: int
    target_id: int


@dataclass(eq=False)
class Returns:
    """Labelled LiDAR returns stored column-wise.

    Attributes:
        points: ``(N, 3)`` measured points (m).
        collection_id: beam index (spinning) or emitter index (OPA).
        target_id: index of the target hit.
        scan: index of the scan that produced the return.
    """

    points: np.ndarray
    collection_id: np.ndarray
    target_id: np.ndarray
    scan: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.collection_id = np.asarray(self.collection_id, dtype=int).reshape(-1)
        self.target_id = np.asarray(self.target_id, dtype=int).reshape(-1)
        if self.scan is None:
            self.scan = np.zeros(len(self.points), dtype=int)
        self.scan = np.asarray(self.scan, dtype=int).reshape(-1)
        n = len(self.points)
        if not (len(self.collection_id) == len(self.target_id) == len(self.scan) == n):
            raise ValueError("column lengths differ")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def target_ids(self) -> np.ndarray:
        return self.target_id

    def select(self, mask) -> "Returns":
        return Returns(self.points[mask], self.collection_id[mask], self.target_id[mask],
                       self.scan[mask])

    def with_points(self, points) -> "Returns":
        return Returns(points, self.collection_id.copy(), self.target_id.copy(), self.scan.copy())

    def records(self) -> list:
        return [LabeledReturn(p, int(c), int(t))
                for p, c, t in zip(self.points, self.collection_id, self.target_id)]

    @staticmethod
    def concatenate(parts: Sequence["Returns"]) -> "Returns":
        return Returns(np.vstack([p.points for p in parts]) if parts else np.zeros((0, 3)),
                       np.concatenate([p.collection_id for p in parts]) if parts else [],
                       np.concatenate([p.target_id for p in parts]) if parts else [],
                       np.concatenate([p.scan for p in parts]) if parts else [])


# -- ray casting ----------------------------------------------------------------------


def _is_left(a, b, p):
    return (b[0] - a[0]) * (p[..., 1] - a[1]) - (p[..., 0] - a[0]) * (b[1] - a[1])


def winding_numbers(points, polygon, edge_tol: float = 1e-12) -> np.ndarray:
    """Winding number of each 2-D point about a closed polygon.

    Points on an edge (within ``edge_tol`` times the polygon size) get the
    polygon's orientation sign (+1 counter-clockwise), so they count as inside.
    """
    pts = np.asarray(points, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    if len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    wn = np.zeros(pts.shape[:-1], dtype=int)
    on_edge = np.zeros(pts.shape[:-1], dtype=bool)
    size = np.ptp(poly, axis=0).max()
    tol = edge_tol * max(size, 1e-300)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        left = _is_left(a, b, pts)
        up = (a[1] <= pts[..., 1]) & (b[1] > pts[..., 1]) & (left > 0)
        down = (a[1] > pts[..., 1]) & (b[1] <= pts[..., 1]) & (left < 0)
        wn += up.astype(int) - down.astype(int)
        e = b - a
        L = np.hypot(*e)
        if L > 0:
            proj = ((pts[..., 0] - a[0]) * e[0] + (pts[..., 1] - a[1]) * e[1]) / L
            on_edge |= (np.abs(left) / L <= tol) & (proj >= -tol) & (proj <= L + tol)
    area2 = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    return np.where(on_edge, 1 if area2 >= 0 else -1, wn)


def winding_number(point, polygon) -> int:
    """Winding number of a single 2-D point; nonzero means inside."""
    return int(winding_numbers(np.asarray(point, dtype=float)[None], polygon)[0])


def _hit_params(origins, dirs, target):
    """Ray parameters of hits on ``target`` (inf where missed)."""
    n = target.normal
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((target.anchor - origins) @ n) / denom
    ok = (np.abs(denom) >= PARALLEL_TOL) & (t > 0)
    out = np.full(len(dirs), np.inf)
    if ok.any():
        idx = np.flatnonzero(ok)
        o = origins if origins.ndim == 1 else origins[idx]
        hits = o + t[idx, None] * dirs[idx]
        inside = winding_numbers(target.to_plane_coords(hits), target.polygon_2d()) != 0
        out[idx[inside]] = t[idx[inside]]
    return out


def cast_rays(origins, dirs, targets) -> tuple[np.ndarray, np.ndarray]:
    """Nearest accepted hit of each ray among ``targets``.

    Returns:
        ``(t, target_index)``; ``t`` is inf and the index -1 for misses.
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    best = np.full(len(dirs), np.inf)
    tid = np.full(len(dirs), -1)
    for k, tg in enumerate(targets):
        t = _hit_params(origins, dirs, tg)
        closer = t < best
        best[closer] = t[closer]
        tid[closer] = k
    return best, tid


def cast_ray(origin, direction, target) -> Optional[np.ndarray]:
    """Intersection of one ray with one target, or None.

    Only hits in front of the origin that fall inside the polygon are
    accepted; rays parallel to the plane (``|n . d| < 1e-12``) miss.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t = _hit_params(o, d[None], target)[0]
    return None if not np.isfinite(t) else o + t * d


# -- spinning scans --------------------------------------------------------------------


def _beam_geometry(model: SpinningLidar, perturbation):
    """Physical ray origins/directions for every (beam, azimuth) firing."""
    az = model.azimuths()
    K, A = model.beam_count, len(az)
    el = np.array(model.elevations)
    origins = np.zeros((K, A, 3))
    true_el = np.repeat(el[:, None], A, axis=1)
    if isinstance(perturbation, (Bl1Perturbation, Bl2Perturbation)):
        for k in range(K):
            p = perturbation.params.get(k)
            if p is None:
                continue
            true_el[k] = p.dtheta
            if isinstance(p, Bl2Params):
                origins[k] = np.stack([-p.h * np.cos(az), p.h * np.sin(az),
                                       np.full(A, p.v)], axis=-1)
    dirs = spherical_to_cartesian(1.0, true_el, np.broadcast_to(az, (K, A)))
    return origins, dirs, az


def ideal_hit_counts(scene, model: SpinningLidar) -> np.ndarray:
    """Number of ideal returns per (beam, target), shape ``(K, T)``."""
    origins, dirs, _ = _beam_geometry(model, NoPerturbation())
    _, tid = cast_rays(np.zeros(3), dirs.reshape(-1, 3), scene.targets)
    tid = tid.reshape(model.beam_count, -1)
    return np.stack([(tid == t).sum(axis=1) for t in range(len(scene.targets))], axis=1)


def _measure_spinning(model, perturbation, hits, rng_t, beam, az_idx, az):
    """Measured points for physical hits ``hits`` (N, 3) with ray parameter ``rng_t``."""
    if isinstance(perturbation, Sim3Perturbation):
        out = hits.copy()
        for k, h in perturbation.transforms.items():
            sel = beam == k
            if sel.any():
                out[sel] = h.inverse().apply(hits[sel])
        return out
    if isinstance(perturbation, (Bl1Perturbation, Bl2Perturbation)):
        out = hits.copy()
        el = np.array(model.elevations)
        for k, p in perturbation.params.items():
            sel = beam == k
            if not sel.any():
                continue
            a = rng_t[sel]
            if isinstance(p, Bl2Params):
                rho = (a - p.drho) / p.s
            else:
                rho = a - p.drho
            out[sel] = spherical_to_cartesian(rho, el[k], az[az_idx[sel]] + p.dphi)
        return out
    return hits.copy()


def _add_range_noise(points, sigma, rng):
    if sigma <= 0:
        return points
    r = np.linalg.norm(points, axis=1)
    return points * (1.0 + rng.normal(0.0, sigma, len(points)) / r)[:, None]


def scan_spinning(scene, model: Optional[SpinningLidar] = None, scan_count: int = 1,
                  perturbation: Optional[PerturbationSpec] = None, rng_seed: int = 0,
                  range_sigma: float = 0.0) -> Returns:
    """Simulate ``scan_count`` revolutions of a spinning LiDAR.

    Args:
        scene: scene with targets; ``scene.lidar`` is used if ``model`` is None.
        perturbation: how the physical sensor departs from nominal. A
            SystematicLevel is applied through :func:`inject_systematic`.
        rng_seed: seeds the range noise (and systematic signs).
        range_sigma: standard deviation of Gaussian range noise (m).

    Raises:
        EmptyScene: if the scene has no targets.
    """
    model = model or scene.lidar
    if not isinstance(model, SpinningLidar):
        raise TypeError("scan_spinning needs a SpinningLidar model")
    if not scene.targets:
        raise EmptyScene("scene has no targets")
    perturbation = perturbation or NoPerturbation()
    origins, dirs, az = _beam_geometry(model, perturbation)
    K, A = dirs.shape[:2]
    t, tid = cast_rays(origins.reshape(-1, 3), dirs.reshape(-1, 3), scene.targets)
    hit = np.flatnonzero(tid >= 0)
    beam, az_idx = np.divmod(hit, A)
    hits = origins.reshape(-1, 3)[hit] + t[hit, None] * dirs.reshape(-1, 3)[hit]
    measured = _measure_spinning(model, perturbation, hits, t[hit], beam, az_idx, az)
    rng = np.random.default_rng(rng_seed)
    parts = []
    for s in range(scan_count):
        pts = _add_range_noise(measured, range_sigma, rng)
        parts.append(Returns(pts, beam, tid[hit], np.full(len(hit), s)))
    out = Returns.concatenate(parts)
    if isinstance(perturbation, SystematicLevel):
        out = inject_systematic(out, perturbation.level, perturbation.seed, perturbation.mode)
    return out


def scan_opa(scene, model: Optional[SolidStateOPA] = None,
             perturbation: Optional[PerturbationSpec] = None, rng_seed: int = 0,
             range_sigma: float = 0.0, scan_count: int = 1) -> Returns:
    """Simulate an OPA solid-state LiDAR.

    Rays leave the origin along the warped emitter directions; the sensor
    reports the measured range along the nominal (flat-wafer) direction.
    ``collection_id`` is the emitter index ``row * cols + col``.
    """
    model = model or scene.lidar
    if not isinstance(model, SolidStateOPA):
        raise TypeError("scan_opa needs a SolidStateOPA model")
    if not scene.targets:
        raise EmptyScene("scene has no targets")
    true_dirs = model.directions(warped=True)
    nominal = model.directions(warped=False)
    t, tid = cast_rays(np.zeros(3), true_dirs, scene.targets)
    hit = np.flatnonzero(tid >= 0)
    measured = t[hit, None] * nominal[hit]
    if isinstance(perturbation, Sim3Perturbation):
        for k, h in perturbation.transforms.items():
            sel = hit == k
            measured[sel] = h.inverse().apply(measured[sel])
    rng = np.random.default_rng(rng_seed)
    parts = [Returns(_add_range_noise(measured, range_sigma, rng), hit, tid[hit],
                     np.full(len(hit), s)) for s in range(scan_count)]
    out = Returns.concatenate(parts)
    if isinstance(perturbation, SystematicLevel):
        out = inject_systematic(out, perturbation.level, perturbation.seed, perturbation.mode)
    return out


def true_points_opa(scene, model: SolidStateOPA) -> Returns:
    """Noise-free physical hit points of an OPA scan (for reference)."""
    t, tid = cast_rays(np.zeros(3), model.directions(warped=True), scene.targets)
    hit = np.flatnonzero(tid >= 0)
    return Returns(t[hit, None] * model.directions(warped=True)[hit], hit, tid[hit])


def inject_systematic(returns: Returns, level: int, rng_seed: int = 0,
                      mode: str = "range") -> Returns:
    """Add a per-collection systematic error of magnitude ``0.01 * level`` m.

    Args:
        level: 0 (passthrough) to 7.
        mode: ``"range"`` shifts every range of a collection by the same
            offset with a seeded random sign. ``"offset"`` shifts every point
            of a collection by the same Cartesian vector in a seeded random
            direction. Offsets are constant across scans.
    """
    if not 0 <= level <= 7:
        raise ValueError("systematic level must be in 0..7")
    if level == 0:
        return returns
    mag = 0.01 * level
    rng = np.random.default_rng(rng_seed)
    pts = returns.points.copy()
    ids = np.unique(returns.collection_id)
    if mode == "range":
        signs = rng.choice([-1.0, 1.0], size=len(ids))
        off = dict(zip(ids.tolist(), signs * mag))
        per_pt = np.array([off[c] for c in returns.collection_id.tolist()])
        r = np.linalg.norm(pts, axis=1)
        pts *= (1.0 + per_pt / r)[:, None]
    elif mode == "offset":
        u = rng.standard_normal((len(ids), 3))
        u *= mag / np.linalg.norm(u, axis=1)[:, None]
        idx = np.searchsorted(ids, returns.collection_id)
        pts += u[idx]
    else:
        raise ValueError(f"unknown systematic mode {mode!r}")
    return returns.with_points(pts)
