"""Planar targets, scenes and target-placement checks.

A ring of a spinning LiDAR sweeps (approximately) a plane through the
sensor; the elevation-zero ring sweeps exactly the plane ``z = 0``. A
similarity transform of a ring is pinned down by four planar targets only
if the target normals and the points where the ring plane meets pairs of
target planes are in general position. The two checks in this module test
those conditions:

* normals: every 3 of the 4 normals plus the ring-plane normal are
  linearly independent;
* intersection points: each of 13 specific pairs of the 6 points
  ``p_ij = ring plane ∩ plane_i ∩ plane_j`` spans the ring plane.

Three targets are never enough: their planes share a point ``q0``, and
scaling about ``q0`` maps every plane onto itself.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateIntersection, NormalizationError, PlacementError
from .liegroup import Rotation

E3 = np.array([0.0, 0.0, 1.0])

#: a set of vectors counts as independent iff sigma_min > INDEP_RTOL * sigma_max
INDEP_RTOL = 1e-6
#: condition number above which a 3x3 plane intersection is rejected
INTERSECTION_COND_MAX = 1e12
#: faces closer than this (rad) to the ring plane are rejected
FACE_PARALLEL_TOL = 1e-3

# pairs of intersection points (1-based labels ij) that must span the ring plane
BASIS_PAIRS = (
    ((1, 2), (1, 3)), ((1, 3), (1, 4)), ((1, 4), (1, 2)),
    ((1, 2), (2, 3)), ((2, 3), (2, 4)), ((2, 4), (1, 2)),
    ((1, 3), (2, 3)), ((2, 3), (3, 4)), ((3, 4), (1, 3)),
    ((1, 4), (2, 4)), ((2, 4), (3, 4)), ((3, 4), (1, 4)),
    ((1, 4), (2, 3)),
)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class PlanarTarget:
    """A planar polygon with a unit normal and an anchor point on its plane.

    Build one with :meth:`from_vertices` to derive the normal and anchor.
    The normal is oriented towards the sensor origin when derived.
    """

    vertices: np.ndarray
    normal: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float).reshape(-1, 3)
        n = np.array(self.normal, dtype=float).reshape(3)
        p = np.array(self.anchor, dtype=float).reshape(3)
        if len(verts) < 3:
            raise ValueError("a target needs at least 3 vertices")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise NormalizationError(f"target normal is not unit length: {np.linalg.norm(n)}")
        off = np.abs((verts - p) @ n).max()
        if off > 1e-9 * max(1.0, np.abs(verts).max()):
            raise ValueError(f"vertices are not coplanar with the anchor (max offset {off:.3e})")
        for name, a in (("vertices", verts), ("normal", n), ("anchor", p)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_vertices(cls, vertices, normal=None, anchor=None) -> "PlanarTarget":
        verts = np.asarray(vertices, dtype=float).reshape(-1, 3)
        if anchor is None:
            anchor = verts.mean(axis=0)
        if normal is None:
            c = verts - verts.mean(axis=0)
            _, s, vt = np.linalg.svd(c)
            if s.size < 2 or s[1] <= 1e-12 * max(s[0], 1e-300):
                raise ValueError("vertices are collinear")
            normal = vt[-1]
            if normal @ np.asarray(anchor) > 0:
                normal = -normal
            # remove SVD round-off so the coplanarity check is meaningful
            anchor = np.asarray(anchor, dtype=float)
            verts = verts - np.outer((verts - anchor) @ normal, normal)
        return cls(verts, _unit(normal), anchor)

    @classmethod
    def square(cls, center, normal, side: float, up=E3, spin: float = 0.0) -> "PlanarTarget":
        """Square of the given side centred at ``center``.

        Edges run along ``up`` (projected into the plane) and its in-plane
        perpendicular, then the square is turned by ``spin`` radians about
        the normal; ``spin = pi / 4`` gives a diamond.
        """
        n = _unit(normal)
        u = np.asarray(up, dtype=float) - (np.asarray(up) @ n) * n
        if np.linalg.norm(u) < 1e-9:
            u = np.array([1.0, 0.0, 0.0]) - n[0] * n
        u = _unit(u)
        w = np.cross(n, u)
        u, w = np.cos(spin) * u + np.sin(spin) * w, np.cos(spin) * w - np.sin(spin) * u
        h = 0.5 * side
        c = np.asarray(center, dtype=float)
        verts = [c - h * w - h * u, c + h * w - h * u, c + h * w + h * u, c - h * w + h * u]
        return cls(np.array(verts), n, c)

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal in-plane axes ``(a, b)`` with ``a x b = normal``."""
        n = self.normal
        e = self.vertices[1] - self.vertices[0]
        a = _unit(e - (e @ n) * n)
        return a, np.cross(n, a)

    def to_plane_coords(self, points) -> np.ndarray:
        a, b = self.basis()
        d = np.asarray(points, dtype=float) - self.anchor
        return np.stack([d @ a, d @ b], axis=-1)

    def polygon_2d(self) -> np.ndarray:
        return self.to_plane_coords(self.vertices)

    def transformed(self, h) -> "PlanarTarget":
        """Image of the target under a rigid or similarity transform."""
        verts = h.apply(self.vertices)
        n = _unit(h.r.m @ self.normal)
        return PlanarTarget(verts - np.outer((verts - h.apply(self.anchor)) @ n, n), n,
                            h.apply(self.anchor))

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "normal": self.normal.tolist(),
                "anchor": self.anchor.tolist()}


@dataclass(frozen=True, eq=False)
class Scene:
    """Targets, a LiDAR model and the ring-plane normal."""

    targets: tuple
    lidar: object = None
    ring_plane_normal: np.ndarray = field(default_factory=lambda: E3.copy())

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        rn = np.asarray(self.ring_plane_normal, dtype=float)
        if abs(np.linalg.norm(rn) - 1.0) > 1e-12:
            raise NormalizationError("ring plane normal must be unit length")
        object.__setattr__(self, "ring_plane_normal", rn)
        for t in self.targets:
            if abs(t.normal @ (np.zeros(3) - t.anchor)) < 1e-12:
                raise PlacementError("a target plane passes through the sensor origin")

    def with_lidar(self, lidar) -> "Scene":
        return replace(self, lidar=lidar)


@dataclass
class PlacementReport:
    """Outcome of the placement checks on a 4-target scene."""

    assumption_n_ok: bool
    assumption_b_ok: bool
    normal_condition_numbers: list
    basis_condition_numbers: list
    intersection_points: dict

    @property
    def ok(self) -> bool:
        return self.assumption_n_ok and self.assumption_b_ok

    def to_dict(self) -> dict:
        return {
            "assumption_n_ok": self.assumption_n_ok,
            "assumption_b_ok": self.assumption_b_ok,
            "normal_condition_numbers": [float(c) for c in self.normal_condition_numbers],
            "basis_condition_numbers": [float(c) for c in self.basis_condition_numbers],
            "intersection_points": {f"{i}{j}": p.tolist()
                                    for (i, j), p in self.intersection_points.items()},
        }


def _independence(vectors) -> tuple[bool, float]:
    s = np.linalg.svd(np.asarray(vectors, dtype=float), compute_uv=False)
    k = min(np.asarray(vectors).shape)
    smin = s[k - 1]
    cond = np.inf if smin == 0 else s[0] / smin
    return bool(smin > INDEP_RTOL * s[0]), float(cond)


def check_assumption_n(normals, ring_normal=E3) -> tuple[bool, list]:
    """Every 3 of ``{n_1..n_4, ring_normal}`` must be linearly independent.

    Returns:
        ``(ok, condition_numbers)`` over the 10 triples, in
        ``itertools.combinations`` order.

    Raises:
        NormalizationError: if any vector is not unit length.
    """
    vecs = [np.asarray(n, dtype=float) for n in normals]
    if len(vecs) != 4:
        raise ValueError("exactly 4 target normals are required")
    vecs.append(np.asarray(ring_normal, dtype=float))
    for v in vecs:
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise NormalizationError(f"vector {v} is not unit length")
    ok, conds = True, []
    for tri in itertools.combinations(vecs, 3):
        ind, c = _independence(tri)
        ok &= ind
        conds.append(c)
    return ok, conds


def plane_intersection(normals, offsets) -> np.ndarray:
    """Point satisfying ``normals[k] . x = offsets[k]`` for three planes.

    Raises:
        DegenerateIntersection: if the system is near singular.
    """
    A = np.asarray(normals, dtype=float)
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > INTERSECTION_COND_MAX:
        raise DegenerateIntersection(f"planes do not meet in a point (cond {c:.3e})")
    return np.linalg.solve(A, np.asarray(offsets, dtype=float))


def common_point(targets) -> np.ndarray:
    """The single point shared by the planes of three targets."""
    if len(targets) != 3:
        raise ValueError("need exactly three targets")
    return plane_intersection([t.normal for t in targets],
                              [t.normal @ t.anchor for t in targets])


def intersection_points(targets, ring_normal=E3, ring_point=None) -> dict:
    """Points ``p_ij`` where the ring plane meets the planes of targets i and j.

    Keys are 1-based pairs ``(i, j)`` with ``i < j``. The ring plane passes
    through ``ring_point`` (the sensor origin by default).
    """
    rn = np.asarray(ring_normal, dtype=float)
    rp = np.zeros(3) if ring_point is None else np.asarray(ring_point, dtype=float)
    out = {}
    for i, j in itertools.combinations(range(len(targets)), 2):
        ti, tj = targets[i], targets[j]
        out[(i + 1, j + 1)] = plane_intersection(
            [ti.normal, tj.normal, rn], [ti.normal @ ti.anchor, tj.normal @ tj.anchor, rn @ rp]
        )
    return out


def check_assumption_b(points: dict) -> tuple[bool, list]:
    """Each of the 13 listed pairs of intersection points must span the ring plane.

    Args:
        points: mapping from 1-based pairs ``(i, j)`` to 3-vectors, as
            returned by :func:`intersection_points`.

    Returns:
        ``(ok, condition_numbers)`` in the order of :data:`BASIS_PAIRS`.
    """
    ok, conds = True, []
    for a, b in BASIS_PAIRS:
        pa, pb = np.asarray(points[a]), np.asarray(points[b])
        if not (np.any(pa) and np.any(pb)):
            ok, conds = False, conds + [np.inf]
            continue
        ind, c = _independence(np.stack([pa, pb], axis=1))
        ok &= ind
        conds.append(c)
    return ok, conds


def placement_report(targets, ring_normal=E3) -> PlacementReport:
    """Run both placement checks on four targets."""
    normals = [t.normal for t in targets]
    n_ok, n_conds = check_assumption_n(normals, ring_normal)
    try:
        pts = intersection_points(targets, ring_normal)
    except DegenerateIntersection:
        return PlacementReport(n_ok, False, n_conds, [], {})
    b_ok, b_conds = check_assumption_b(pts)
    return PlacementReport(n_ok, b_ok, n_conds, b_conds, pts)


# -- scene generators ---------------------------------------------------------

_TETRA_NORMALS = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(3)


def tetrahedron_face_normals(orientation: Optional[Rotation] = None) -> np.ndarray:
    """Outward face normals of a regular tetrahedron centred on the origin."""
    m = np.eye(3) if orientation is None else orientation.m
    return _TETRA_NORMALS @ m.T


def face_elevations(orientation: Rotation) -> np.ndarray:
    """Elevation angles (rad) of the tetrahedron's outward face normals."""
    return np.arcsin(np.clip(tetrahedron_face_normals(orientation)[:, 2], -1, 1))


def default_tetrahedron_orientation() -> Rotation:
    """A generic orientation with every face normal within about 40 degrees of the horizon."""
    return Rotation.from_axis_angle([0.0, 0.0, 1.0], np.deg2rad(20.0)) @ Rotation.from_axis_angle(
        [1.0, 0.0, 0.0], np.deg2rad(5.0))


def random_tetrahedron_orientation(rng: np.random.Generator,
                                   max_face_elevation: float = np.deg2rad(50.0)) -> Rotation:
    """Uniform random orientation, rejected until every face normal's
    elevation is within ``max_face_elevation`` of the horizon.
    """
    for _ in range(100000):
        r = Rotation.random(rng)
        if np.all(np.abs(face_elevations(r)) <= max_face_elevation):
            return r
    raise PlacementError("no orientation found under the face elevation limit")


def make_tetrahedron_scene(radius: float = 3.0, orientation: Optional[Rotation] = None,
                           side: Optional[float] = None, lidar=None,
                           min_points: int = 10, shape: str = "diamond") -> Scene:
    """Four square targets on the faces of a regular tetrahedron around the sensor.

    Each face plane lies at distance ``radius`` from the origin. A target is
    centred where the face plane meets the ray pointing along the face
    normal's horizontal direction (at the middle beam elevation when a
    spinning ``lidar`` is given).

    ``shape="diamond"`` turns each square by 45 degrees so that every ring
    crosses two slanted edges; the chord length then fixes where along the
    target a ring runs, which the vertex fit needs. With ``"square"`` the
    edges are horizontal and vertical. The diagonal (diamond) or side
    (square) is ``radius`` unless ``side`` is set; with a ``lidar``, targets
    are then grown until each beam returns at least ``min_points`` points
    from each target.

    Raises:
        PlacementError: if a face is (nearly) parallel to the ring plane or
            cannot be sized to serve every beam.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if orientation is None:
        orientation = default_tetrahedron_orientation()
    outward = tetrahedron_face_normals(orientation)
    if shape not in ("diamond", "square"):
        raise ValueError("shape must be 'diamond' or 'square'")
    diamond = shape == "diamond"
    side = (radius / np.sqrt(2) if diamond else radius) if side is None else side
    elevs = getattr(lidar, "elevations", None)
    mid = 0.0 if elevs is None else 0.5 * (np.min(elevs) + np.max(elevs))
    targets = []
    for m in outward:
        horiz = np.hypot(m[0], m[1])
        if np.arccos(min(horiz, 1.0)) > np.pi / 2 - FACE_PARALLEL_TOL:
            raise PlacementError("a tetrahedron face is parallel to the ring plane")
        az = np.arctan2(m[0], m[1])
        center, sd = _aim_square(m, radius, az, mid, elevs, side, diamond)
        targets.append(PlanarTarget.square(center, -m, sd, spin=np.pi / 4 if diamond else 0.0))
    scene = Scene(tuple(targets), lidar)
    if lidar is not None and hasattr(lidar, "elevations"):
        scene = grow_targets_for_lidar(scene, lidar, min_points=min_points)
    return scene


def _ray(el, az):
    return np.array([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])


def _aim_square(m, radius, az, mid, elevs, side, diamond=False):
    d = _ray(mid, az)
    if m @ d <= 1e-6:
        raise PlacementError("face plane is not in front of the middle beam")
    center = radius / (m @ d) * d
    if elevs is None:
        return center, side
    # cover the hits of the lowest and highest beam along the centre azimuth
    u = E3 - (E3 @ m) * m
    u = u / np.linalg.norm(u)
    hits = []
    for el in (np.min(elevs), np.max(elevs)):
        d = _ray(el, az)
        if m @ d > 1e-6:
            hits.append(radius / (m @ d) * d)
    if len(hits) == 2:
        hu = [(h - center) @ u for h in hits]
        center = center + 0.5 * (hu[0] + hu[1]) * u
        span = abs(hu[1] - hu[0])
        # a diamond's vertical extent is its diagonal; leave room for chords at the tips
        side = max(side, 1.5 * span / np.sqrt(2) if diamond else 1.3 * span)
    return center, side


def grow_targets_for_lidar(scene: Scene, lidar, min_points: int = 10,
                           factor: float = 1.2, max_rounds: int = 25) -> Scene:
    """Enlarge square targets until every beam hits every target enough.

    Targets that are short of returns on some beam are scaled about their
    anchor by ``factor`` per round.

    Raises:
        PlacementError: if ``max_rounds`` is exhausted.
    """
    from .simulator import ideal_hit_counts

    targets = list(scene.targets)
    for _ in range(max_rounds):
        counts = ideal_hit_counts(Scene(tuple(targets), lidar), lidar)
        short = counts.min(axis=0) < min_points
        if not short.any():
            return Scene(tuple(targets), lidar, scene.ring_plane_normal)
        for k in np.flatnonzero(short):
            t = targets[k]
            verts = t.anchor + factor * (t.vertices - t.anchor)
            targets[k] = PlanarTarget(verts, t.normal, t.anchor)
    raise PlacementError(f"could not size targets to give {min_points} points per beam")


def degenerate_three_target_scene(q0=(0.0, 3.0, 0.0), side: float = 1.0,
                                  lidar=None) -> tuple[Scene, np.ndarray]:
    """Three targets whose planes all pass through ``q0`` on the ring plane.

    The targets sit at azimuths 0 and about ±35 degrees on the ring plane
    ``z = 0``, so the elevation-zero ring crosses every target and the
    ring plane contains ``q0``. Any scaling about ``q0`` maps each plane
    onto itself, so the scale of a ring is not identifiable.

    Returns:
        ``(scene, q0)`` with ``q0`` recomputed from the target planes.
    """
    q0 = np.asarray(q0, dtype=float)
    if abs(q0[2]) > 1e-12:
        raise ValueError("q0 must lie on the ring plane z = 0")
    normals = [_unit([0.0, -1.0, 0.0]), _unit([-0.5, -1.0, 0.4]), _unit([0.5, -1.0, 0.3])]
    targets = []
    for n, az in zip(normals, np.deg2rad([0.0, 35.0, -35.0])):
        d = _ray(0.0, az)
        targets.append(PlanarTarget.square((n @ q0) / (n @ d) * d, n, side))
    scene = Scene(tuple(targets), lidar)
    return scene, common_point(scene.targets)


def validation_scene(n_targets: int = 24, seed: int = 7, lidar=None,
                     distance_range=(3.0, 8.0), max_tilt_deg: float = 40.0) -> Scene:
    """Cluttered scene of square targets at varied azimuths, distances and tilts.

    Targets occupy disjoint azimuth sectors, so none shadows another. Target
    centres are drawn within the beam elevations of ``lidar`` when given.
    """
    rng = np.random.default_rng(seed)
    elevs = getattr(lidar, "elevations", None)
    el_lo, el_hi = (-0.3, 0.2) if elevs is None else (np.min(elevs), np.max(elevs))
    sector = 2 * np.pi / n_targets
    targets = []
    for k in range(n_targets):
        az = (k + 0.5) * sector - np.pi
        dist = rng.uniform(*distance_range)
        el = rng.uniform(el_lo + 0.05, el_hi - 0.05) if el_hi - el_lo > 0.1 else 0.5 * (el_lo + el_hi)
        d = _ray(el, az)
        center = dist * d
        tilt_axis = _unit(np.cross(d, rng.standard_normal(3)))
        tilt = np.deg2rad(rng.uniform(0.0, max_tilt_deg))
        n = Rotation.from_axis_angle(tilt_axis, tilt) @ (-d)
        # keep the square inside its sector
        side = 0.8 * dist * sector * np.cos(tilt) if n_targets > 4 else dist
        side = min(side, 0.8 * dist * sector)
        targets.append(PlanarTarget.square(center, n, side))
    return Scene(tuple(targets), lidar)
