"""Splitting returns into point collections and estimating target planes.

A point collection is the set of returns that share one calibration
transform: a whole ring, a 90-degree arc of a ring, or a cell of a grid
laid over a solid-state sensor's field of view or over a target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, minimize

from .errors import EmptyInput, FitFailed, RankDeficient
from .liegroup import Rotation, _so3_exp


# -- schemes and collections -----------------------------------------------------


@dataclass(frozen=True)
class PerRing:
    """One collection per beam."""

    name: str = "ring"


@dataclass(frozen=True)
class PerArc:
    """Each ring split into ``arcs`` equal azimuth sectors (quadrants by default)."""

    arcs: int = 4
    name: str = "arc"


@dataclass(frozen=True)
class Grid:
    """An ``m x n`` grid (``m`` columns, ``n`` rows).

    With ``frame="target"`` the grid spans each target's bounding rectangle
    in the target plane and cells are numbered per target. With
    ``frame="emitter"`` the grid spans the emitter array of a solid-state
    sensor, so a cell collects the same emitters across all targets; the
    array shape must then be given as ``array_shape=(rows, cols)``.
    """

    m: int
    n: int
    frame: str = "target"
    array_shape: Optional[tuple] = None
    name: str = "grid"


Scheme = Union[PerRing, PerArc, Grid]


@dataclass(eq=False)
class PointCollection:
    """Returns sharing one calibration transform.

    Attributes:
        id: collection id under the scheme.
        points: ``(N, 3)`` points.
        target_ids: target index per point.
        scheme: the scheme that produced it.
        index: row indices into the parsed returns.
    """

    id: int
    points: np.ndarray
    target_ids: np.ndarray
    scheme: object
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def collection_ids(returns, scheme: Scheme, targets=None) -> np.ndarray:
    """Collection id of every return under ``scheme``."""
    if isinstance(scheme, PerRing):
        return returns.collection_id.copy()
    if isinstance(scheme, PerArc):
        az = np.mod(np.arctan2(returns.points[:, 0], returns.points[:, 1]), 2 * np.pi)
        arc = np.minimum((az / (2 * np.pi / scheme.arcs)).astype(int), scheme.arcs - 1)
        return returns.collection_id * scheme.arcs + arc
    if isinstance(scheme, Grid):
        if scheme.frame == "emitter":
            if scheme.array_shape is None:
                raise ValueError("an emitter grid needs array_shape=(rows, cols)")
            rows, cols = scheme.array_shape
            r, c = np.divmod(returns.collection_id, cols)
            gc = np.minimum(c * scheme.m // cols, scheme.m - 1)
            gr = np.minimum(r * scheme.n // rows, scheme.n - 1)
            return gr * scheme.m + gc
        if targets is None:
            raise ValueError("a target grid needs the targets")
        ids = np.empty(len(returns), dtype=int)
        for t, tg in enumerate(targets):
            sel = returns.target_id == t
            if not sel.any():
                continue
            uv = tg.to_plane_coords(returns.points[sel])
            poly = tg.polygon_2d()
            lo, hi = poly.min(axis=0), poly.max(axis=0)
            f = (uv - lo) / (hi - lo)
            gc = np.clip((f[:, 0] * scheme.m).astype(int), 0, scheme.m - 1)
            gr = np.clip((f[:, 1] * scheme.n).astype(int), 0, scheme.n - 1)
            ids[sel] = t * scheme.m * scheme.n + gr * scheme.m + gc
        return ids
    raise TypeError(f"unknown scheme {scheme!r}")


def parse(returns, scheme: Scheme, targets=None) -> list:
    """Partition returns into point collections, ordered by collection id.

    Raises:
        EmptyInput: if there are no returns.
    """
    if len(returns) == 0:
        raise EmptyInput("no returns to parse")
    ids = collection_ids(returns, scheme, targets)
    out = []
    for cid in np.unique(ids):
        idx = np.flatnonzero(ids == cid)
        out.append(PointCollection(int(cid), returns.points[idx], returns.target_id[idx],
                                   scheme, idx))
    return out


# -- plane and vertex estimation ------------------------------------------------------


@dataclass(eq=False)
class TargetEstimate:
    """A target plane estimated from data.

    Attributes:
        normal: unit normal, oriented towards the sensor origin.
        anchor: a point on the plane.
        vertices: fitted corners, if a shape was fitted.
        fit_cost: final value of the fitting objective.
        pose: fitted target pose ``(R, c)`` mapping target frame to sensor frame.
    """

    normal: np.ndarray
    anchor: np.ndarray
    vertices: Optional[np.ndarray] = None
    fit_cost: float = 0.0
    pose: Optional[tuple] = None

    def to_dict(self) -> dict:
        d = {"normal": self.normal.tolist(), "anchor": self.anchor.tolist(),
             "fit_cost": self.fit_cost}
        if self.vertices is not None:
            d["vertices"] = self.vertices.tolist()
        return d


def l1_box_cost(lam, a):
    """Distance of ``lam`` to the interval ``[-a, a]`` (0 inside).

    For ``|lam| > a`` this is ``min(|lam - a|, |lam + a|)``.
    """
    lam = np.asarray(lam, dtype=float)
    return np.where(np.abs(lam) > a, np.minimum(np.abs(lam - a), np.abs(lam + a)), 0.0)


def square_target_cost(points_target_frame, width: float, eps: float) -> float:
    """Total fitting error of points already expressed in the target frame.

    The ideal target is the square ``|y|, |z| <= width / 2`` in the plane
    ``x = 0``, thickened to ``|x| <= eps``.
    """
    p = np.asarray(points_target_frame)
    return float(np.sum(l1_box_cost(p[:, 0], eps) + l1_box_cost(p[:, 1], width / 2)
                        + l1_box_cost(p[:, 2], width / 2)))


def _orient_towards_origin(n, p):
    return -n if n @ p > 0 else n


def _pca_frame(points):
    c = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - c, full_matrices=False)
    return c, vt, s / np.sqrt(max(len(points) - 1, 1))


L1_COST_TOL = 1e-6


def l1_vertex_fit(points, width: float, eps: Optional[float] = None,
                  init_pose: Optional[tuple] = None, seeds: int = 8,
                  max_evals: int = 4000, max_restarts: int = 20,
                  polish: bool = True) -> TargetEstimate:
    """Fit a square target of side ``width`` to the points on it.

    The target pose ``(R, c)`` maps the ideal target frame (normal along x,
    edges along y and z) into the sensor frame. The pose minimises the
    total box cost of the pulled-back points ``R^T (p - c)`` with a
    derivative-free local search, started from ``seeds``
    in-plane orientations around the principal axes of the points. A
    given ``init_pose`` is tried first. Each start gets one Nelder-Mead
    pass; the best one is then restarted until a restart improves the cost
    by less than a relative ``1e-12``. With ``init_pose`` and ``seeds=0``
    only the LP polish runs, starting from ``init_pose``.

    Args:
        points: ``(N, 3)`` returns on one target, ``N >= 8``.
        width: side length of the square target.
        eps: half thickness of the zero-cost slab around the plane;
            defaults to the smallest principal-axis standard deviation.
        polish: finish with :func:`_lp_polish`, which lands on the exact
            kink of the piecewise-linear cost that Nelder-Mead only nears.

    Raises:
        FitFailed: if no start converges; ``args[1]`` holds the best
            estimate found.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 8:
        raise ValueError("l1_vertex_fit needs at least 8 points")
    if width <= 0:
        raise ValueError("width must be positive")
    c0, axes, sd = _pca_frame(pts)
    if eps is None:
        eps = float(sd[-1])
    if eps < 0:
        raise ValueError("eps must be non-negative")
    n0 = _orient_towards_origin(axes[2], c0)
    # scale-free parameters: rotation vector and translation in units of width
    def unpack(x, R0, t0):
        return R0 @ _so3_exp(x[:3]), t0 + x[3:] * width

    def cost(x, R0, t0):
        R, c = unpack(x, R0, t0)
        return square_target_cost((pts - c) @ R, width, eps)

    starts = []
    if init_pose is not None:
        starts.append((np.asarray(init_pose[0], dtype=float), np.asarray(init_pose[1], dtype=float)))
    u0 = axes[0]
    for k in range(seeds):
        ang = k * (np.pi / 2) / seeds
        u = np.cos(ang) * u0 + np.sin(ang) * np.cross(n0, u0)
        R0 = np.stack([n0, u, np.cross(n0, u)], axis=1)
        starts.append((R0, c0))
    if seeds == 0 and init_pose is not None and polish:
        # refinement of a known pose: stay on the nearest minimiser
        R, c, f = _lp_polish(pts, width, eps, *starts[0])
        return _estimate_from_pose(R, c, width, f)
    nm_opts = {"xatol": 1e-10, "fatol": 1e-14, "maxfev": max_evals, "adaptive": True}
    # one pass from every start, then restart the most promising one: Nelder-Mead
    # stalls on the kinks of the cost, so keep restarting until it stops improving
    firsts = []
    for R0, t0 in starts:
        res = minimize(cost, np.zeros(6), args=(R0, t0), method="Nelder-Mead", options=nm_opts)
        firsts.append((res.fun, res.x, R0, t0))
        if res.fun <= 1e-12:
            break
    f, x, R0, t0 = min(firsts, key=lambda e: e[0])
    ok = False
    for _ in range(max_restarts):
        res = minimize(cost, x, args=(R0, t0), method="Nelder-Mead", options=nm_opts)
        improved = f - res.fun
        if res.fun < f:
            x, f = res.x, res.fun
        if improved <= L1_COST_TOL * 1e-6 * (1.0 + f):
            ok = True
            break
    R, c = unpack(x, R0, t0)
    if polish:
        R, c, f = _lp_polish(pts, width, eps, R, c)
    any_ok = ok
    best = (f, R, c)
    fun, R, c = best
    est = _estimate_from_pose(R, c, width, fun)
    if not any_ok:
        raise FitFailed("no start of the vertex fit converged", est)
    return est


def _lp_polish(pts, width, eps, R, c, radius=1e-2, max_iter=100, tol=1e-13, prox=1e-9):
    """Sequential linear programming on the box cost, with a trust region.

    Around the pose ``(R, c)`` the pulled-back points are linear in a
    rotation increment ``w`` and a shift ``tau`` (target frame):
    ``q + q x w - tau``. Each box term ``max(0, |l| - a)`` is modelled by a
    slack ``t >= +-l - a``, ``t >= 0``, giving an LP. Steps that do not
    lower the true cost shrink the region.

    With sampled edges the minimisers form a small flat set (the pose can
    slide inside the gaps between edge returns). A proximal term
    ``prox * |step|_1`` (relative to the point count, translation in units
    of ``width``) breaks the tie towards the starting pose, so refits on
    slowly changing data move continuously.

    Returns:
        ``(R, c, cost)``.
    """
    half = np.array([eps, width / 2, width / 2])
    f = square_target_cost((pts - c) @ R, width, eps)
    rad = radius  # rotation bound (rad); translation bound is rad * width
    for _ in range(max_iter):
        if rad < tol or f <= 0.0:
            break
        q = (pts - c) @ R
        reach = np.abs(q).sum(axis=1) * rad + rad * width
        # only coordinates that can reach their box face inside the region matter
        act_i, act_k = np.nonzero(np.abs(q) > half - reach[:, None])
        m = len(act_i)
        if m == 0:
            break
        # d l / d w = -[q]_x ; d l / d tau = -I
        qa = q[act_i]
        k = act_k
        jw = np.zeros((m, 3))
        jw[k == 0] = np.c_[np.zeros((k == 0).sum()), -qa[k == 0, 2], qa[k == 0, 1]]
        jw[k == 1] = np.c_[qa[k == 1, 2], np.zeros((k == 1).sum()), -qa[k == 1, 0]]
        jw[k == 2] = np.c_[-qa[k == 2, 1], qa[k == 2, 0], np.zeros((k == 2).sum())]
        jt = np.zeros((m, 3))
        jt[np.arange(m), k] = -1.0
        jac = np.c_[jw, jt]
        l0 = qa[np.arange(m), k]
        a = half[k]
        eye = sparse.identity(m, format="csr")
        jac_s = sparse.csr_matrix(jac)
        # +-(l0 + J d) - a <= t   ->   +-J d - t <= a -+ l0
        A = sparse.vstack([sparse.hstack([jac_s, -eye]), sparse.hstack([-jac_s, -eye])])
        b = np.r_[a - l0, a + l0]
        # |d| <= u for the proximal term
        sc = np.r_[np.ones(3), np.full(3, 1.0 / width)]
        dsel = sparse.csr_matrix(np.diag(sc))
        z = sparse.csr_matrix((6, m))
        A = sparse.vstack([
            sparse.hstack([A, sparse.csr_matrix((2 * m, 6))]),
            sparse.hstack([dsel, z, -sparse.identity(6)]),
            sparse.hstack([-dsel, z, -sparse.identity(6)]),
        ]).tocsr()
        b = np.r_[b, np.zeros(12)]
        cvec = np.r_[np.zeros(6), np.ones(m), np.full(6, prox * len(pts))]
        bounds = ([(-rad, rad)] * 3 + [(-rad * width, rad * width)] * 3 + [(0, None)] * m
                  + [(0, None)] * 6)
        lp = linprog(cvec, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if lp.status != 0:
            rad *= 0.25
            continue
        d = lp.x[:6]
        Rn = R @ _so3_exp(d[:3])
        cn = c + R @ d[3:]
        fn = square_target_cost((pts - cn) @ Rn, width, eps)
        if fn < f or (fn == f and not d.any()):
            step = np.max(np.abs(d[:3])) + np.max(np.abs(d[3:])) / width
            R, c, f = Rn, cn, fn
            if step < 0.5 * rad:
                rad = max(step, tol) * 2.0 if step > 0 else rad * 0.25
        else:
            rad *= 0.25
    return R, c, f


def _estimate_from_pose(R, c, width, fun):
    h = width / 2
    corners = np.array([[0, -h, -h], [0, h, -h], [0, h, h], [0, -h, h]], dtype=float)
    verts = c + corners @ R.T
    n = _orient_towards_origin(R[:, 0], c)
    return TargetEstimate(n, c, verts, float(fun), (R, c))


def weighted_plane_fit(points, weighting: str = "gaussian",
                       length_scale: Optional[float] = None) -> TargetEstimate:
    """Weighted total-least-squares plane.

    Minimises ``sum w_i (n . (x_i - p0))^2`` with ``p0`` the weighted
    centroid.

    Args:
        weighting: ``"gaussian"`` uses ``w = exp(-d^2 / (2 l^2))`` with ``d``
            the distance to the centroid and ``l`` the median such distance
            (or ``length_scale``), which down-weights the rim of the
            patch. ``"distance"`` uses ``w = d`` literally. ``"uniform"``
            gives the ordinary total-least-squares plane.

    Raises:
        RankDeficient: fewer than 3 points or collinear points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise RankDeficient("need at least 3 points for a plane")
    mu = pts.mean(axis=0)
    d = np.linalg.norm(pts - mu, axis=1)
    if weighting == "gaussian":
        ell = float(np.median(d)) if length_scale is None else float(length_scale)
        w = np.exp(-d**2 / (2 * ell**2)) if ell > 0 else np.ones(len(pts))
    elif weighting == "distance":
        w = d
    elif weighting == "uniform":
        w = np.ones(len(pts))
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    if w.sum() <= 0:
        raise RankDeficient("all weights vanish")
    p0 = (w[:, None] * pts).sum(axis=0) / w.sum()
    X = np.sqrt(w)[:, None] * (pts - p0)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s.size < 2 or s[1] <= 1e-10 * s[0]:
        raise RankDeficient("points are collinear")
    n = _orient_towards_origin(vt[-1], p0)
    resid = (pts - p0) @ n
    return TargetEstimate(n, p0, None, float(np.sum(w * resid**2)))


def estimate_targets_l1(returns, widths, n_targets: Optional[int] = None, eps=None,
                        init: Optional[Sequence[TargetEstimate]] = None) -> list:
    """Fit every target (by ``target_id``) of a return set with :func:`l1_vertex_fit`."""
    n_targets = int(returns.target_id.max()) + 1 if n_targets is None else n_targets
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (n_targets,))
    out = []
    for t in range(n_targets):
        pts = returns.points[returns.target_id == t]
        pose = None if init is None or init[t].pose is None else init[t].pose
        try:
            out.append(l1_vertex_fit(pts, widths[t], eps, init_pose=pose,
                                     seeds=8 if pose is None else 0))
        except FitFailed as e:
            out.append(e.args[1])
    return out
