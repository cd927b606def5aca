"""Calibration solvers.

* Baselines: per-collection local optimisation of the 3- and 6-parameter
  spherical models under a (smoothed) absolute point-to-plane cost.
* Sim(3): the cost is minimised over scale by bracketing on the sign of a
  symmetric-difference derivative of the profile
  ``f(s) = min_{R, v} J(s, R, v)``, where every evaluation of ``f`` is a
  certified global SE(3) solve (see :mod:`sim3cal.sdp`).
* Alternating refinement of calibration and target estimates.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .cost import QuadraticForm, _plane_arrays, assemble_plane_w, mean_abs_p2p
from .errors import ConvergenceWarning, NotCertified, ScaleUnidentifiable, TranslationUnobservable
from .liegroup import Rotation, SimilarityTransform, cartesian_to_spherical
from .models import (Bl1Params, Bl2Params, apply_model, bl1_apply, bl2_apply,
                     bl2_apply_matrix_form)
from .parsing import PerRing, collection_ids, parse
from .sdp import SdpCertificate, solve_se3_global

__all__ = [
    "Bl1Params", "Bl2Params", "bl1_apply", "bl2_apply", "bl2_apply_matrix_form",
    "CalibrationResult", "solve_baseline", "solve_se3_global", "solve_sim3_global",
    "scale_profile", "alternate_refine", "joint_plane_polish", "umeyama", "calibrate", "SdpCertificate",
]

#: bisection settings
GRAD_STEP = 1e-3
GRAD_DEADBAND = 1e-6
BRACKET_TOL = 1e-5
MAX_ITER = 60
GRID_POINTS = 101
FLAT_TOL = 1e-9
#: relative singular value below which a baseline fit is flagged non-unique
RANK_RTOL = 1e-6


@dataclass(eq=False)
class CalibrationResult:
    """Per-collection calibration parameters and diagnostics.

    Attributes:
        model: ``"sim3"``, ``"bl1"`` or ``"bl2"``.
        transforms: collection id -> SimilarityTransform, Bl1Params or Bl2Params.
        status: collection id -> ``"ok"`` or a flag such as
            ``"scale_unidentifiable"``, ``"translation_unobservable"``,
            ``"not_certified"``, ``"non_unique"``.
        training_cost: collection id -> final objective value.
        certificates: collection id -> SdpCertificate (Sim(3) only).
        iterations: collection id -> outer iterations used.
        wall_time: seconds spent.
        scheme: the parsing scheme the ids refer to.
        residuals: optional residual statistics (e.g. on validation data).
        history: per-iteration log of :func:`alternate_refine`.
        info: free-form per-collection details (e.g. scale profiles).
    """

    model: str
    transforms: dict
    status: dict
    training_cost: dict
    certificates: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    wall_time: float = 0.0
    scheme: object = None
    residuals: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def apply_to_points(self, points, ids) -> np.ndarray:
        """Calibrated copies of ``points`` whose collection ids are ``ids``.

        Points of collections without parameters are left unchanged.
        """
        pts = np.array(points, dtype=float, copy=True)
        ids = np.asarray(ids)
        for cid, tr in self.transforms.items():
            sel = ids == cid
            if not sel.any():
                continue
            if isinstance(tr, SimilarityTransform):
                pts[sel] = tr.apply(pts[sel])
            else:
                pts[sel] = apply_model(pts[sel], tr)
        return pts

    def apply(self, returns, targets=None):
        """Calibrated copy of a :class:`~sim3cal.simulator.Returns`."""
        ids = collection_ids(returns, self.scheme or PerRing(), targets)
        return returns.with_points(self.apply_to_points(returns.points, ids))

    def ok_ids(self) -> list:
        return [k for k, s in self.status.items() if s == "ok"]

    def to_dict(self, timing: bool = True) -> dict:
        """JSON-ready dict; ``timing=False`` drops the wall time for reproducible files."""
        out = {
            "format": "calibration_v1",
            "model": self.model,
            "scheme": _scheme_to_dict(self.scheme),
            "collections": [
                {
                    "id": int(k),
                    "params": self.transforms[k].to_dict(),
                    "status": self.status.get(k, "ok"),
                    "training_cost": float(self.training_cost.get(k, float("nan"))),
                    "iterations": int(self.iterations.get(k, 0)),
                    "certificate": (self.certificates[k].to_dict()
                                    if k in self.certificates else None),
                }
                for k in sorted(self.transforms)
            ],
            "residuals": self.residuals,
            "history": self.history,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        model = d["model"]
        transforms, status, cost, its = {}, {}, {}, {}
        for c in d["collections"]:
            k = int(c["id"])
            p = c["params"]
            if model == "sim3":
                transforms[k] = SimilarityTransform.from_dict(p)
            elif model == "bl1":
                transforms[k] = Bl1Params(**p)
            else:
                transforms[k] = Bl2Params(**p)
            status[k] = c.get("status", "ok")
            cost[k] = c.get("training_cost", float("nan"))
            its[k] = c.get("iterations", 0)
        return cls(model, transforms, status, cost, {}, its, d.get("wall_time", 0.0),
                   _scheme_from_dict(d.get("scheme")), d.get("residuals", {}),
                   d.get("history", []))


def _scheme_to_dict(scheme) -> Optional[dict]:
    if scheme is None:
        return None
    from dataclasses import asdict

    d = asdict(scheme)
    if d.get("array_shape") is not None:
        d["array_shape"] = list(d["array_shape"])
    return d


def _scheme_from_dict(d):
    from .parsing import Grid, PerArc

    if d is None:
        return None
    name = d.get("name")
    if name == "ring":
        return PerRing()
    if name == "arc":
        return PerArc(d.get("arcs", 4))
    if name == "grid":
        shape = d.get("array_shape")
        return Grid(d["m"], d["n"], d.get("frame", "target"),
                    tuple(shape) if shape is not None else None)
    raise ValueError(f"unknown scheme {d!r}")


# -- baselines ------------------------------------------------------------------------


def _baseline_residuals(model, sp, normals, anchors):
    if model == "bl1":
        def res(x):
            q = bl1_apply(sp, Bl1Params(*x))
            return np.einsum("ij,ij->i", normals, q - anchors)
    else:
        def res(x):
            q = bl2_apply(sp, Bl2Params(*x))
            return np.einsum("ij,ij->i", normals, q - anchors)
    return res


def _default_init(model, sp):
    el = float(np.median(sp[:, 1]))
    if model == "bl1":
        return np.array([0.0, el, 0.0])
    return np.array([0.0, el, 0.0, 1.0, 0.0, 0.0])


def fit_baseline_collection(model: str, points, target_ids, targets, init=None,
                            smoothing=(1e-2, 1e-4, 1e-6)):
    """Fit one collection with a spherical baseline model.

    Minimises ``sum sqrt(r_i^2 + d^2)`` with ``r_i`` the point-to-plane
    residual of the corrected point. A plain least-squares fit comes first
    (it has a wide basin), then the smoothing ``d`` is lowered in stages
    (continuation); the last stage (``1e-6``) is the objective.

    Returns:
        ``(params, cost, non_unique, singular_values)`` where ``cost`` is the
        plain sum of absolute residuals.
    """
    sp = cartesian_to_spherical(points)
    normals, anchors = _plane_arrays(targets)
    tid = np.asarray(target_ids)
    res = _baseline_residuals(model, sp, normals[tid], anchors[tid])
    if init is None:
        x = _default_init(model, sp)
    else:
        x = np.asarray(init.as_array() if hasattr(init, "as_array") else init, dtype=float)
    if model == "bl1":
        bounds = (-np.inf, np.inf)
    else:
        bounds = ([-np.inf, -np.inf, -np.inf, 0.5, -np.inf, -np.inf],
                  [np.inf, np.inf, np.inf, 2.0, np.inf, np.inf])
    # unit variable scaling here: Jacobian scaling takes long first steps that can
    # land in a neighbouring basin of the elevation parameter
    sol = least_squares(res, x, method="trf", bounds=bounds, max_nfev=2000)
    x = sol.x
    for d in smoothing:
        sol = least_squares(res, x, loss="soft_l1", f_scale=d, method="trf", bounds=bounds,
                            x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        x = sol.x
    J = sol.jac
    cn = np.linalg.norm(J, axis=0)
    sv = np.linalg.svd(J / np.where(cn > 0, cn, 1.0), compute_uv=False)
    non_unique = bool(np.any(cn == 0) or sv[-1] <= RANK_RTOL * sv[0])
    params = Bl1Params.from_array(x) if model == "bl1" else Bl2Params.from_array(x)
    return params, float(np.sum(np.abs(res(x)))), non_unique, sv


def solve_baseline(model: str, collections: Sequence, targets, init=None) -> CalibrationResult:
    """Fit a baseline model (``"bl1"`` or ``"bl2"``) to every collection.

    Args:
        collections: PointCollections (e.g. from :func:`~sim3cal.parsing.parse`).
        targets: target planes (anything with ``normal`` and ``anchor``).
        init: optional mapping collection id -> initial parameters. The
            default starts from zero offsets, unit range scale and the
            median measured elevation of the collection.
    """
    model = model.lower()
    if model not in ("bl1", "bl2"):
        raise ValueError("model must be 'bl1' or 'bl2'")
    t0 = time.perf_counter()
    transforms, status, costs, info = {}, {}, {}, {}
    scheme = collections[0].scheme if collections else None
    for c in collections:
        x0 = None if init is None else init.get(c.id)
        p, cst, nu, sv = fit_baseline_collection(model, c.points, c.target_ids, targets, x0)
        transforms[c.id] = p
        costs[c.id] = cst
        status[c.id] = "non_unique" if nu else "ok"
        info[c.id] = {"singular_values": sv.tolist()}
    return CalibrationResult(model, transforms, status, costs, wall_time=time.perf_counter() - t0,
                             scheme=scheme, info=info)


# -- Sim(3) ---------------------------------------------------------------------------


class _Profile:
    """Memoised ``f(s)`` with warm-started certified SE(3) solves."""

    def __init__(self, W1, warm_start=None):
        self.W1 = W1
        self.warm = warm_start
        self.cache = {}
        self.certified = True
        self.solves = 0

    def solve(self, s):
        s = float(s)
        if s in self.cache:
            return self.cache[s]
        d = np.ones(13)
        d[:9] = s
        qf = QuadraticForm.from_w(self.W1 * np.outer(d, d))
        try:
            T, cert = solve_se3_global(qf, warm_start=self.warm)
        except NotCertified as e:
            cert = e.certificate
            if cert is None:
                raise
            self.certified = False
            from .liegroup import RigidTransform

            R = cert.extracted_rotation
            T = RigidTransform(R, qf.translation(R))
        self.solves += 1
        self.warm = cert
        out = (max(cert.primal, 0.0), T, cert)
        self.cache[s] = out
        return out

    def f(self, s):
        return self.solve(s)[0]


def scale_profile(points, target_ids, targets, scales) -> np.ndarray:
    """``f(s) = min_{R, v} J(s, R, v)`` at each scale (certified inner solves)."""
    normals, anchors = _plane_arrays(targets)
    tid = np.asarray(target_ids)
    W1 = assemble_plane_w(points, normals[tid], anchors[tid])
    QuadraticForm.from_w(W1)
    prof = _Profile(W1)
    return np.array([prof.f(s) for s in scales])


def _check_flat(prof, scales):
    # scaling about the common point of <= 3 planes multiplies every residual by
    # the scale factor, so f(s) / s^2 is constant exactly when s is unidentifiable
    g = np.array([prof.f(s) / s**2 for s in scales])
    return float(g.max() - g.min()) <= FLAT_TOL * (1.0 + float(np.abs(g).max())), g


def solve_sim3_collection(points, target_ids, targets, s_range=(0.8, 1.2), s_init=None,
                          warm_start=None, grad_step=GRAD_STEP, deadband=GRAD_DEADBAND,
                          bracket_tol=BRACKET_TOL, max_iter=MAX_ITER, polish: bool = True):
    """Global Sim(3) fit of one collection to planar targets.

    Returns:
        dict with ``transform``, ``certificate``, ``cost``, ``iterations``,
        ``certified``, ``solves``, ``grid_fallback`` and ``bracket``.

    Raises:
        TranslationUnobservable: fewer than three independent target normals.
        ScaleUnidentifiable: the profile is flat in scale; the exception
            carries the rigid (``s = 1``) solution as ``args[1]``.
    """
    normals, anchors = _plane_arrays(targets)
    tid = np.asarray(target_ids)
    W1 = assemble_plane_w(np.asarray(points, dtype=float), normals[tid], anchors[tid])
    QuadraticForm.from_w(W1)  # raises TranslationUnobservable
    prof = _Profile(W1, warm_start)
    lo, hi = map(float, s_range)
    if not 0 < lo < hi:
        raise ValueError("s_range must be positive and increasing")
    mid = 0.5 * (lo + hi)
    flat, g = _check_flat(prof, (lo, mid, hi))
    if flat:
        s1 = min(max(1.0, lo), hi)
        f1, T1, c1 = prof.solve(s1)
        raise ScaleUnidentifiable(
            "cost profile is flat in scale", {"transform": T1.as_similarity(s1),
                                              "certificate": c1, "cost": f1, "profile": g})
    grid_fallback = False
    if prof.f(mid) > max(prof.f(lo), prof.f(hi)):
        # profile is not convex-looking; locate the basin on a dense grid first
        grid_fallback = True
        ss = np.linspace(lo, hi, GRID_POINTS)
        fs = [prof.f(s) for s in ss]
        k = int(np.argmin(fs))
        lo, hi = ss[max(k - 1, 0)], ss[min(k + 1, GRID_POINTS - 1)]
    it = 0
    s = float(s_init) if s_init is not None else 0.5 * (lo + hi)
    s = min(max(s, lo), hi)
    while hi - lo >= bracket_tol and it < max_iter:
        it += 1
        prof.f(s)
        grad = (prof.f(s + grad_step) - prof.f(s - grad_step)) / (2 * grad_step)
        if grad < -deadband:
            lo = s
        elif grad > deadband:
            hi = s
        else:
            break
        s = 0.5 * (lo + hi)
    if polish:
        s = _polish_scale(prof, s, lo, hi, grad_step)
    f, T, cert = prof.solve(s)
    return {
        "transform": T.as_similarity(s),
        "certificate": cert,
        "cost": f,
        "iterations": it,
        "certified": prof.certified and cert.valid,
        "solves": prof.solves,
        "grid_fallback": grid_fallback,
        "bracket": (lo, hi),
    }


def _polish_scale(prof, s, lo, hi, h, shrink=(1.0, 1e-1, 1e-2)):
    """Newton steps on the profile from central differences, kept near the bracket.

    The difference step shrinks between steps because the O(h^2) bias of the
    central difference dominates the final scale error otherwise.
    """
    lo_b, hi_b = lo - h, hi + h
    for k in shrink:
        hk = h * k
        fm, f0, fp = prof.f(s - hk), prof.f(s), prof.f(s + hk)
        curv = fp - 2 * f0 + fm
        if not curv > 0:
            continue
        sn = s - 0.5 * hk * (fp - fm) / curv
        if lo_b <= sn <= hi_b and prof.f(sn) <= f0:
            s = sn
    return s


def solve_sim3_global(collections: Sequence, targets, s_range=(0.8, 1.2), s_init=None,
                      warm_start=None, **kw) -> CalibrationResult:
    """Certified global Sim(3) calibration of every collection.

    Collections whose translation or scale is not identifiable are flagged
    in ``status`` (their transform is the rigid best fit, or the identity
    when even that is undefined) instead of raising.

    Args:
        s_init: optional mapping id -> first scale probed by the bisection.
        warm_start: optional mapping id -> rotation or certificate used to
            warm start the first inner solve.
    """
    t0 = time.perf_counter()
    transforms, status, costs, certs, its, info = {}, {}, {}, {}, {}, {}
    scheme = collections[0].scheme if collections else None
    for c in collections:
        si = None if s_init is None else s_init.get(c.id)
        ws = None if warm_start is None else warm_start.get(c.id)
        if ws is not None and not isinstance(ws, SdpCertificate):
            ws = (getattr(ws, "m", ws), None)
        try:
            out = solve_sim3_collection(c.points, c.target_ids, targets, s_range, si, ws, **kw)
        except TranslationUnobservable:
            transforms[c.id] = SimilarityTransform.identity()
            status[c.id] = "translation_unobservable"
            costs[c.id] = mean_abs_p2p(None, c.points, c.target_ids, targets)
            continue
        except ScaleUnidentifiable as e:
            d = e.args[1]
            transforms[c.id] = d["transform"]
            certs[c.id] = d["certificate"]
            status[c.id] = "scale_unidentifiable"
            costs[c.id] = d["cost"]
            info[c.id] = {"profile_over_s2": d["profile"].tolist()}
            continue
        transforms[c.id] = out["transform"]
        certs[c.id] = out["certificate"]
        costs[c.id] = out["cost"]
        its[c.id] = out["iterations"]
        status[c.id] = "ok" if out["certified"] else "not_certified"
        info[c.id] = {k: out[k] for k in ("solves", "grid_fallback", "bracket")}
    return CalibrationResult("sim3", transforms, status, costs, certs, its,
                             time.perf_counter() - t0, scheme, info=info)


def calibrate(model: str, collections, targets, **kw) -> CalibrationResult:
    """Dispatch to :func:`solve_sim3_global` or :func:`solve_baseline`."""
    if model == "sim3":
        return solve_sim3_global(collections, targets, **kw)
    return solve_baseline(model, collections, targets, **kw)


# -- alternating refinement -----------------------------------------------------------


def umeyama(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity ``G`` with ``G(src) ~ dst`` (closed form, SVD)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    U, sig, Vt = np.linalg.svd(xd.T @ xs / len(src))
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = (U * D) @ Vt
    s = float(sig @ D / np.mean(np.sum(xs**2, axis=1))) if with_scale else 1.0
    return SimilarityTransform(s, Rotation.from_matrix(R), mu_d - s * R @ mu_s)


def _refit_targets(returns, prev, widths):
    from .errors import FitFailed
    from .parsing import l1_vertex_fit, weighted_plane_fit

    out = []
    for t, e in enumerate(prev):
        pts = returns.points[returns.target_id == t]
        if widths is None:
            out.append(weighted_plane_fit(pts, "uniform"))
            continue
        try:
            fit = l1_vertex_fit(pts, widths[t], init_pose=e.pose,
                                seeds=8 if e.pose is None else 0)
        except FitFailed as err:
            fit = err.args[1]
        out.append(fit)
    return out


def _tangent_basis(n):
    a = np.eye(3)[int(np.argmin(np.abs(n)))]
    b1 = np.cross(n, a)
    b1 /= np.linalg.norm(b1)
    return np.column_stack([b1, np.cross(n, b1)])


def joint_plane_polish(collections, transforms: dict, targets, max_nfev: int = 50):
    """Jointly refine all Sim(3) transforms and target planes by least squares.

    Minimises the summed squared point-to-plane distance over every
    collection's transform and every target plane at once. The gauge is
    pinned by holding the rotation and translation of the largest collection
    and the mean log-scale of all collections fixed; a free common scale
    would let the cost shrink towards zero.

    Returns:
        ``(transforms, targets)`` with updated transforms and plane-only
        :class:`~sim3cal.parsing.TargetEstimate` objects.
    """
    from scipy.sparse import lil_matrix

    from .parsing import TargetEstimate

    cols = [c for c in collections if len(c.points)]
    fixed = max(range(len(cols)), key=lambda i: len(cols[i].points))
    free = [i for i in range(len(cols)) if i != fixed]
    slot = {i: j for j, i in enumerate(free)}
    n_t = len(targets)
    n0 = np.array([e.normal for e in targets], float)
    d0 = np.array([e.normal @ e.anchor for e in targets], float)
    basis = np.array([_tangent_basis(n) for n in n0])
    h0 = [transforms[c.id] for c in cols]
    off_t = 7 * len(free)

    def unpack(x):
        p = x[:off_t].reshape(-1, 7)
        hs = []
        for i, h in enumerate(h0):
            if i == fixed:
                hs.append((h.s * np.exp(-p[:, 0].sum()), h.r.m, h.v))
                continue
            q = p[slot[i]]
            hs.append((h.s * np.exp(q[0]), h.r.m @ Rotation.from_rotvec(q[1:4]).m, h.v + q[4:7]))
        pl = x[off_t:].reshape(n_t, 3)
        normals = n0 + np.einsum("tij,tj->ti", basis, pl[:, :2])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return hs, normals, d0 + pl[:, 2]

    def residuals(x):
        hs, normals, d = unpack(x)
        out = []
        for c, (sc, R, v) in zip(cols, hs):
            q = sc * c.points @ R.T + v
            t = c.target_ids
            out.append(np.einsum("ij,ij->i", q, normals[t]) - d[t])
        return np.concatenate(out)

    sizes = [len(c.points) for c in cols]
    sp = lil_matrix((sum(sizes), off_t + 3 * n_t), dtype=int)
    row = 0
    for i, c in enumerate(cols):
        rows = np.arange(row, row + sizes[i])[:, None]
        if i == fixed:
            sp[rows, 7 * np.arange(len(free))[None, :]] = 1
        else:
            sp[rows, 7 * slot[i] + np.arange(7)[None, :]] = 1
        for k in range(3):
            sp[rows[:, 0], off_t + 3 * c.target_ids + k] = 1
        row += sizes[i]
    sol = least_squares(residuals, np.zeros(off_t + 3 * n_t), jac_sparsity=sp.tocsr(),
                        method="trf", x_scale="jac", max_nfev=max_nfev,
                        xtol=1e-12, ftol=1e-12, gtol=1e-12)
    hs, normals, d = unpack(sol.x)
    out_tf = dict(transforms)
    for c, (sc, R, v) in zip(cols, hs):
        out_tf[c.id] = SimilarityTransform(sc, Rotation(R), v)
    out_targets = [TargetEstimate(n, e.anchor + (dd - n @ e.anchor) * n,
                                  fit_cost=getattr(e, "fit_cost", 0.0))
                   for e, n, dd in zip(targets, normals, d)]
    return out_tf, out_targets


def _transform_plane(g: SimilarityTransform, e):
    from .parsing import TargetEstimate

    return TargetEstimate(g.r.m @ e.normal, g.apply(e.anchor[None, :])[0], fit_cost=e.fit_cost)


def _vertex_shift(a, b) -> float:
    if a.vertices is not None and b.vertices is not None:
        return float(np.max(np.linalg.norm(a.vertices - b.vertices, axis=1)))
    # planes only: displacement of the anchor's projection plus normal change
    return float(max(abs(b.normal @ (a.anchor - b.anchor)), np.linalg.norm(a.normal - b.normal)))


def alternate_refine(returns, estimates, model: str = "sim3", scheme=None, widths=None,
                     tol: float = 1e-5, max_iter: int = 50, fix_gauge: bool = True,
                     stall_window: int = 5, polish: bool = True,
                     **solver_kw) -> CalibrationResult:
    """Alternate between calibrating and re-estimating the targets.

    Each iteration solves the calibration against the current target
    planes, applies it to the raw returns and re-fits every target from the
    calibrated cloud. It stops when the largest vertex displacement between
    iterations drops below ``tol``.

    A rigid motion applied to all collections and all targets at once
    leaves the training cost unchanged, so it is not observable, and without
    known target sizes neither is a common scale. Left free, the loop drifts
    along these directions. For Sim(3) the drift is removed after every
    calibration step by composing all transforms with the transform (rigid
    when ``widths`` is given, similarity otherwise) that best maps the
    calibrated cloud back onto the raw cloud; targets are then re-fitted in
    that frame.

    Args:
        returns: raw (uncalibrated) Returns with target labels.
        estimates: initial TargetEstimate per target id.
        widths: target side lengths; when given, corners are re-fitted with
            :func:`~sim3cal.parsing.l1_vertex_fit`, otherwise only planes.
        polish: for Sim(3) with planes only, follow every re-fit with
            :func:`joint_plane_polish` before the next calibration. Plain
            alternation contracts very slowly along directions where a plane
            tilt and a matching change of the ring transforms nearly cancel;
            the joint step jumps to the common fixed point, and the stopping
            test is still applied to the plain re-fit displacement.
        **solver_kw: forwarded to the calibration solver.

    Returns:
        CalibrationResult whose ``history`` lists, per iteration, the
        training cost (the calibration objective against that iteration's
        input targets), the vertex displacement ``delta_m`` and the
        re-fitted targets. ``info["targets"]`` holds the final targets.

    Warns:
        ConvergenceWarning: vertex displacement failed to decrease for
            ``stall_window`` consecutive iterations, or ``max_iter`` reached.
    """
    model = model.lower()
    scheme = scheme or PerRing()
    cols = parse(returns, scheme)
    n_t = len(estimates)
    widths = None if widths is None else np.broadcast_to(np.asarray(widths, float), (n_t,))
    targets = list(estimates)
    history = []
    t0 = time.perf_counter()
    res = None
    stall = 0
    for it in range(1, max_iter + 1):
        res = calibrate(model, cols, targets, **solver_kw)
        res.scheme = scheme
        if fix_gauge and model == "sim3":
            ids = collection_ids(returns, scheme)
            # known target widths fix the scale, so only the rigid part is a gauge
            g = umeyama(res.apply_to_points(returns.points, ids), returns.points,
                        with_scale=widths is None)
            res.transforms = {k: g.compose(h) for k, h in res.transforms.items()}
        calibrated = res.apply(returns)
        new = _refit_targets(calibrated, targets, widths)
        delta = max(_vertex_shift(a, b) for a, b in zip(targets, new))
        cost = float(sum(res.training_cost.values()))
        history.append({"iteration": it, "training_cost": cost, "delta_m": delta,
                        "targets": [e.to_dict() for e in new]})
        if len(history) > 1 and delta >= history[-2]["delta_m"]:
            stall += 1
        else:
            stall = 0
        targets = new
        if delta < tol:
            break
        if polish and model == "sim3" and widths is None:
            tf, targets = joint_plane_polish(cols, res.transforms, new)
            if fix_gauge:
                # back into the frame the next calibration will be gauge-fixed to
                raw = {c.id: c.points for c in cols}
                g = umeyama(np.vstack([tf[k].apply(raw[k]) for k in raw]),
                            np.vstack(list(raw.values())))
                targets = [_transform_plane(g, e) for e in targets]
        if stall >= stall_window:
            warnings.warn(f"alternation stalled at iteration {it} (delta_m={delta:.3g})",
                          ConvergenceWarning, stacklevel=2)
            break
    else:
        warnings.warn(f"alternation hit max_iter={max_iter} (delta_m={delta:.3g})",
                      ConvergenceWarning, stacklevel=2)
    res.history = history
    res.iterations = {k: len(history) for k in res.transforms}
    res.wall_time = time.perf_counter() - t0
    res.info["targets"] = targets
    return res
