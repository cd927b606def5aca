"""Point-to-plane costs, reporting metrics and quadratic forms for registration.

The registration residual of a point ``x`` under ``(s, R, v)`` is linear in
``tau = [vec(R); v; 1]`` once the scale has been folded into the points::

    s R x + v - p = N(s x) @ tau,   N(x) = [x^T kron I3 | I3 | -p]

``vec`` stacks columns (column-major), which is what makes the identity
``(x^T kron I3) vec(R) = R x`` hold. A kernel weights the 3-vector residual
with a PSD matrix ``M`` (``n n^T`` for planes, ``I`` for points,
``I - d d^T`` for lines), and the total cost is ``tau^T W tau`` with
``W = sum_i N_i^T M_i N_i``. Minimising over ``v`` in closed form leaves a
10x10 form over ``[vec(R); 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import TranslationUnobservable

#: translation block is treated as singular above this condition number
TRANSLATION_COND_MAX = 1e12

# index sets inside tau = [vec(R) (9), v (3), 1]
_IDX_R = np.r_[0:9, 12]
_IDX_V = np.arange(9, 12)


def _unwrap(points, target_ids=None):
    if hasattr(points, "points"):
        if target_ids is None:
            target_ids = points.target_ids
        points = points.points
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts, None if target_ids is None else np.asarray(target_ids, dtype=int)


def _plane_arrays(targets):
    normals = np.array([np.asarray(t.normal, dtype=float) for t in targets]).reshape(-1, 3)
    anchors = np.array([np.asarray(t.anchor, dtype=float) for t in targets]).reshape(-1, 3)
    return normals, anchors


def signed_residuals(points, target_ids, targets, h=None) -> np.ndarray:
    """Signed point-to-plane distances ``n_t . (H x - p_t)`` per point."""
    pts, tid = _unwrap(points, target_ids)
    if h is not None:
        pts = h.apply(pts)
    normals, anchors = _plane_arrays(targets)
    return np.einsum("ij,ij->i", normals[tid], pts - anchors[tid])


def p2p_cost(h, points, target_ids, targets) -> float:
    """Sum of squared point-to-plane distances after applying ``h``.

    ``h`` may be None for the identity. ``points`` may also be an object
    with ``points`` and ``target_ids`` attributes (e.g. a PointCollection),
    in which case ``target_ids`` can be None.
    """
    r = signed_residuals(points, target_ids, targets, h)
    return float(np.sum(r * r))


def mean_abs_p2p(h, points, target_ids, targets) -> float:
    """Mean absolute point-to-plane distance in meters (reporting metric)."""
    r = signed_residuals(points, target_ids, targets, h)
    if r.size == 0:
        return float("nan")
    return float(np.mean(np.abs(r)))


def thickness(points, target) -> float:
    """Spread (max - min) of signed distances of ``points`` to ``target``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        raise ValueError("thickness needs at least two points")
    d = (pts - np.asarray(target.anchor)) @ np.asarray(target.normal)
    return float(d.max() - d.min())


def classify_systematic(residuals, sigma: float) -> bool:
    """True iff the mean absolute residual exceeds ``3 * sigma`` (strictly)."""
    r = np.asarray(residuals, dtype=float)
    return bool(np.mean(np.abs(r)) > 3.0 * sigma)


def flag_systematic_collections(residuals, collection_ids, target_ids) -> dict:
    """Apply :func:`classify_systematic` to every (collection, target) group.

    ``sigma`` for each target is the standard deviation of all residuals on
    that target. Returns ``{(collection_id, target_id): bool}``.
    """
    r = np.asarray(residuals, dtype=float)
    cid = np.asarray(collection_ids)
    tid = np.asarray(target_ids)
    out = {}
    for t in np.unique(tid):
        on_t = tid == t
        sigma = float(np.std(r[on_t]))
        for c in np.unique(cid[on_t]):
            sel = on_t & (cid == c)
            out[(int(c), int(t))] = classify_systematic(r[sel], sigma)
    return out


# -- registration kernels ----------------------------------------------------


@dataclass(frozen=True)
class PointToPlane:
    normal: np.ndarray
    anchor: np.ndarray

    def factors(self):
        n = np.asarray(self.normal, dtype=float)
        return n[None, :], np.asarray(self.anchor, dtype=float)


@dataclass(frozen=True)
class PointToPoint:
    target: np.ndarray

    def factors(self):
        return np.eye(3), np.asarray(self.target, dtype=float)


@dataclass(frozen=True)
class PointToLine:
    point: np.ndarray
    direction: np.ndarray

    def factors(self):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        # orthonormal complement of d: M = I - d d^T = U^T U
        u, _, _ = np.linalg.svd(d[:, None])
        return u[:, 1:].T, np.asarray(self.point, dtype=float)


ResidualKernel = Union[PointToPlane, PointToPoint, PointToLine]


def kernel_matrix(kernel: ResidualKernel) -> np.ndarray:
    """The 3x3 PSD weight ``M`` of a kernel."""
    u, _ = kernel.factors()
    return u.T @ u


def _rows(points, dirs, anchors) -> np.ndarray:
    """Rows ``u^T N(x)`` for points ``(N,3)``, unit rows ``u`` ``(N,3)`` and anchors."""
    kron = (points[:, :, None] * dirs[:, None, :]).reshape(len(points), 9)
    off = -np.einsum("ij,ij->i", dirs, anchors)
    return np.hstack([kron, dirs, off[:, None]])


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Registration cost as a quadratic form.

    Attributes:
        W: 13x13 PSD matrix over ``[vec(R); v; 1]``.
        q_tilde: 10x10 Schur complement over ``[vec(R); y]`` with ``y = 1``.
        wvv: 3x3 translation block.
        wvr: 3x10 coupling between ``v`` and ``[vec(R); 1]``.
    """

    W: np.ndarray
    q_tilde: np.ndarray
    wvv: np.ndarray
    wvr: np.ndarray

    @classmethod
    def from_w(cls, W) -> "QuadraticForm":
        W = 0.5 * (W + W.T)
        wvv = W[np.ix_(_IDX_V, _IDX_V)]
        wvr = W[np.ix_(_IDX_V, _IDX_R)]
        w = np.linalg.eigvalsh(wvv)
        if w[-1] <= 0 or w[0] <= w[-1] / TRANSLATION_COND_MAX:
            raise TranslationUnobservable(
                f"translation block is singular (eigenvalues {w})"
            )
        q = W[np.ix_(_IDX_R, _IDX_R)] - wvr.T @ np.linalg.solve(wvv, wvr)
        return cls(W, 0.5 * (q + q.T), wvv, wvr)

    def scaled(self, s: float) -> "QuadraticForm":
        """Form for the same data with all points multiplied by ``s``."""
        d = np.ones(13)
        d[:9] = s
        return QuadraticForm.from_w(self.W * np.outer(d, d))

    def translation(self, r) -> np.ndarray:
        """Optimal translation for rotation ``r`` (matrix or Rotation)."""
        m = getattr(r, "m", r)
        rt = np.append(np.asarray(m).ravel(order="F"), 1.0)
        return -np.linalg.solve(self.wvv, self.wvr @ rt)

    def cost(self, r, v=None) -> float:
        """Cost at ``(R, v)``; with ``v=None`` the translation is profiled out."""
        m = np.asarray(getattr(r, "m", r))
        if v is None:
            rt = np.append(m.ravel(order="F"), 1.0)
            return float(rt @ self.q_tilde @ rt)
        tau = np.concatenate([m.ravel(order="F"), v, [1.0]])
        return float(tau @ self.W @ tau)


def assemble_w(points, kernels: Union[ResidualKernel, Sequence[ResidualKernel]]) -> np.ndarray:
    """13x13 matrix ``W = sum_i N_i^T M_i N_i``.

    Args:
        points: ``(N, 3)`` points, already multiplied by the scale.
        kernels: one kernel per point, or a single kernel shared by all.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not isinstance(kernels, (list, tuple)):
        kernels = [kernels] * len(pts)
    if len(kernels) != len(pts):
        raise ValueError("need one kernel per point")
    if len(pts) == 0:
        raise ValueError("no points")
    xs, us, ps = [], [], []
    for x, k in zip(pts, kernels):
        u, p = k.factors()
        xs.append(np.broadcast_to(x, u.shape))
        us.append(u)
        ps.append(np.broadcast_to(p, u.shape))
    A = _rows(np.vstack(xs), np.vstack(us), np.vstack(ps))
    return A.T @ A


def assemble_plane_w(points, normals, anchors) -> np.ndarray:
    """Vectorised :func:`assemble_w` for point-to-plane kernels only."""
    A = _rows(np.asarray(points, dtype=float), np.asarray(normals, dtype=float),
              np.asarray(anchors, dtype=float))
    return A.T @ A


def assemble_quadratic(points, kernels) -> QuadraticForm:
    """Quadratic form of the registration cost for pre-scaled ``points``.

    Raises:
        TranslationUnobservable: if the translation block is singular, e.g.
            when all kernels are planes sharing fewer than three independent
            normals.
    """
    return QuadraticForm.from_w(assemble_w(points, kernels))


def plane_quadratic(points, target_ids, targets) -> QuadraticForm:
    """Quadratic form for point-to-plane residuals against labelled targets."""
    pts, tid = _unwrap(points, target_ids)
    normals, anchors = _plane_arrays(targets)
    return QuadraticForm.from_w(assemble_plane_w(pts, normals[tid], anchors[tid]))
