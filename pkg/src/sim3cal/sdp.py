"""Globally optimal rotation fitting through a Lagrangian dual SDP.

The inner problem is ``min_R q^T Q q`` over ``q = [vec(R); y]`` with ``y = 1``
and ``R`` in SO(3). SO(3) is written with redundant quadratic equalities in
``q`` (all homogeneous, so ``y`` carries the affine terms)::

    R^T R = y^2 I        6 constraints
    R R^T = y^2 I        6 constraints
    c_i x c_j = y c_k    9 constraints, (i, j, k) cyclic, c_i = columns of R
    y^2 = 1              1 constraint

Each homogeneous constraint ``q^T A_k q = 0`` receives a multiplier and the
dual reads::

    maximise gamma  s.t.  Z = Q + sum_k lam_k A_k - gamma E  is PSD,

with ``E = e_y e_y^T``. A log-det barrier method with Newton steps solves the
dual. The rotation is read off the null vector of ``Z`` and polished by a
few Riemannian Newton steps; finally the multipliers are corrected so that
``Z q = 0`` holds exactly at the polished rotation, and the smallest
eigenvalue of that ``Z`` is the certificate: if it is non-negative the
rotation is a global minimiser.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NotCertified
from .liegroup import RigidTransform, Rotation, _so3_exp, project_to_so3

#: certificate thresholds on the normalised dual matrix
MIN_EIG_TOL = 1e-8
GAP_REL_TOL = 1e-6
MULTIPLICITY_TOL = 1e-7
NULL_STARTS = 16

_Y = 9


def _sym(i, j, val, m):
    m[i, j] += 0.5 * val
    m[j, i] += 0.5 * val


def constraint_matrices() -> tuple[np.ndarray, list[str]]:
    """The 21 homogeneous constraint matrices and their labels.

    The matrices are 10x10 and act on ``q = [c_1; c_2; c_3; y]``.
    """
    mats, names = [], []
    for i, j in itertools.combinations_with_replacement(range(3), 2):
        m = np.zeros((10, 10))
        for a in range(3):
            _sym(3 * i + a, 3 * j + a, 1.0, m)
        if i == j:
            m[_Y, _Y] -= 1.0
        mats.append(m)
        names.append(f"RtR[{i},{j}]")
    for a, b in itertools.combinations_with_replacement(range(3), 2):
        m = np.zeros((10, 10))
        for k in range(3):
            _sym(3 * k + a, 3 * k + b, 1.0, m)
        if a == b:
            m[_Y, _Y] -= 1.0
        mats.append(m)
        names.append(f"RRt[{a},{b}]")
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        for c in range(3):
            m = np.zeros((10, 10))
            c1, c2 = (c + 1) % 3, (c + 2) % 3
            _sym(3 * i + c1, 3 * j + c2, 1.0, m)
            _sym(3 * i + c2, 3 * j + c1, -1.0, m)
            _sym(_Y, 3 * k + c, -1.0, m)
            mats.append(m)
            names.append(f"cross[{i}{j}->{k}][{c}]")
    return np.array(mats), names


_A, CONSTRAINT_NAMES = constraint_matrices()
_E = np.zeros((10, 10))
_E[_Y, _Y] = 1.0
# trace(R^T R) = trace(R R^T) makes one multiplier redundant; it is pinned to 0
_PINNED = CONSTRAINT_NAMES.index("RRt[2,2]")
_FREE = np.array([k for k in range(len(_A)) if k != _PINNED])
# Newton variables: free multipliers then gamma
_B = np.concatenate([_A[_FREE], -_E[None]], axis=0)
_BF = _B.reshape(len(_B), 100)
_NV = len(_B)
_G = len(_B) - 1

_HAT = np.array([[[0, 0, 0], [0, 0, -1], [0, 1, 0]],
                 [[0, 0, 1], [0, 0, 0], [-1, 0, 0]],
                 [[0, -1, 0], [1, 0, 0], [0, 0, 0]]], dtype=float)
_HH = 0.5 * (np.einsum("kab,lbc->klac", _HAT, _HAT) + np.einsum("lab,kbc->klac", _HAT, _HAT))


@dataclass(frozen=True, eq=False)
class SdpCertificate:
    """Dual certificate for the SE(3) inner problem.

    Attributes:
        lam: 22 multipliers; the last one is ``gamma`` (for ``y^2 = 1``).
        gamma: dual objective value in the units of the input form.
        min_eig_Z: smallest eigenvalue of ``Z / scale``.
        second_eig_Z: second smallest eigenvalue of ``Z / scale``.
        duality_gap: primal value minus the certified lower bound.
        primal: cost of the extracted rotation.
        extracted_rotation: the rotation read off the dual.
        scale: normalisation applied to ``Q`` before solving.
        barrier_iterations: Newton steps taken by the barrier method.
    """

    lam: np.ndarray
    gamma: float
    min_eig_Z: float
    second_eig_Z: float
    duality_gap: float
    primal: float
    extracted_rotation: Rotation
    scale: float
    barrier_iterations: int = 0

    @property
    def valid(self) -> bool:
        return (self.min_eig_Z >= -MIN_EIG_TOL
                and abs(self.duality_gap) <= GAP_REL_TOL * (1.0 + abs(self.primal))
                and self.second_eig_Z > self.min_eig_Z + MULTIPLICITY_TOL)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "gamma": self.gamma,
            "min_eig_Z": self.min_eig_Z,
            "second_eig_Z": self.second_eig_Z,
            "duality_gap": self.duality_gap,
            "primal": self.primal,
            "rotation": self.extracted_rotation.m.tolist(),
            "valid": self.valid,
        }


def dual_matrix(q, lam_free, gamma) -> np.ndarray:
    """``Z = Q + sum lam_k A_k - gamma E`` with the pinned multiplier at 0."""
    x = np.append(lam_free, gamma)
    return q + (x @ _BF).reshape(10, 10)


def _line_search(L, dz, dgamma, t):
    """Exact minimiser of the barrier along a Newton direction.

    Along ``x + a dx`` the barrier is ``-t (gamma + a dgamma) - sum log(1 + a mu)``
    up to a constant, where ``mu`` are the eigenvalues of ``L^-1 dZ L^-T``.
    """
    Li = np.linalg.inv(L)
    mu = np.linalg.eigvalsh(Li @ dz @ Li.T)
    neg = mu[mu < 0]
    amax = np.inf if neg.size == 0 else -1.0 / neg.min()
    lo, hi = 0.0, min(amax * 0.999, 1e6)
    a = min(1.0, 0.99 * amax)
    # derivative of the 1-D barrier is increasing in a
    for _ in range(60):
        d = -t * dgamma - np.sum(mu / (1.0 + a * mu))
        if abs(d) < 1e-10 * (1 + t * abs(dgamma)):
            break
        if d > 0:
            hi = a
        else:
            lo = a
        dd = np.sum(mu * mu / (1.0 + a * mu) ** 2)
        an = a - d / dd if dd > 0 else 0.5 * (lo + hi)
        a = an if lo < an < hi else 0.5 * (lo + hi)
    return a


def barrier_dual(q, t_final=1e6, mu=100.0, x0=None, t0=1.0, max_newton=400):
    """Barrier method on the dual for a normalised ``q`` (10x10, PSD).

    Returns ``(lam_free, gamma, Z, iterations)``.
    """
    if x0 is None:
        x = np.zeros(_NV)
        # lam = 1 on the diagonal of R^T R = y^2 I gives Z = Q + diag(I9, -3) - gamma E
        for k in range(3):
            x[CONSTRAINT_NAMES.index(f"RtR[{k},{k}]")] = 1.0
        x[_G] = -4.0
    else:
        x = np.array(x0, dtype=float)
    t = t0
    its = 0
    Z = q + (x @ _BF).reshape(10, 10)
    while True:
        for _ in range(50):
            L = np.linalg.cholesky(Z)
            S = np.linalg.inv(Z)
            SB = S @ _B
            g = -(_BF @ S.ravel())
            g[_G] -= t
            # H_kl = tr(S B_k S B_l)
            H = SB.reshape(_NV, 100) @ SB.transpose(0, 2, 1).reshape(_NV, 100).T
            try:
                dx = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(H, g, rcond=None)[0]
            dec = -g @ dx
            its += 1
            dz = (dx @ _BF).reshape(10, 10)
            a = _line_search(L, dz, dx[_G], t)
            x = x + a * dx
            Z = q + (x @ _BF).reshape(10, 10)
            if dec < 1e-6 or its >= max_newton:
                break
        if t >= t_final or its >= max_newton:
            break
        t = min(t * mu, t_final)
    return x[:-1], x[_G], Z, its


def _vecr(R):
    return np.append(R.ravel(order="F"), 1.0)


def polish_rotation(q, R, iters=20):
    """Riemannian Newton on ``f(R) = [vec R; 1]^T q [vec R; 1]`` over SO(3)."""
    qrr = q[:9, :9]
    qr1 = q[:9, 9]
    f = _vecr(R) @ q @ _vecr(R)
    for _ in range(iters):
        r = R.ravel(order="F")
        b = 2.0 * (qrr @ r + qr1)
        # columns: vec(R hat(e_k))
        G = np.einsum("ab,kbc->kac", R, _HAT).transpose(0, 2, 1).reshape(3, 9).T
        g = G.T @ b
        C = R.T @ b.reshape(3, 3, order="F")
        H = 2.0 * G.T @ qrr @ G + np.einsum("ab,klab->kl", C, _HH)
        try:
            w = np.linalg.eigvalsh(H)
            step = -np.linalg.solve(H, g) if w[0] > 0 else -g / max(abs(w[-1]), 1e-12)
        except np.linalg.LinAlgError:
            step = -g
        a = 1.0
        while a > 1e-6:
            Rn = R @ _so3_exp(a * step)
            fn = _vecr(Rn) @ q @ _vecr(Rn)
            if fn <= f:
                break
            a *= 0.5
        else:
            break
        R, f_old, f = Rn, f, fn
        if np.linalg.norm(a * step) < 1e-15 or f_old - f <= 1e-17 * max(abs(f), 1e-300):
            break
    return project_to_so3(R), f


def certify_rotation(q, R, lam_free_hint):
    """Correct multipliers so that ``Z q = 0`` at ``R`` and inspect ``Z``.

    Returns ``(lam_free, gamma, eigenvalues of Z)`` for the normalised ``q``.
    """
    qq = _vecr(R)
    gamma = float(qq @ q @ qq)
    Z0 = dual_matrix(q, lam_free_hint, gamma)
    K = (_A[_FREE] @ qq).T
    delta = np.linalg.lstsq(K, -(Z0 @ qq), rcond=None)[0]
    lam = lam_free_hint + delta
    Z = dual_matrix(q, lam, gamma)
    return lam, gamma, np.linalg.eigvalsh(Z)


def _full_lambda(lam_free, gamma):
    lam = np.zeros(len(_A) + 1)
    lam[_FREE] = lam_free
    lam[-1] = gamma
    return lam


def _extract(Z):
    w, V = np.linalg.eigh(Z)
    v = V[:, 0]
    if abs(v[_Y]) < 1e-6:
        return None, w
    v = v / v[_Y]
    R = project_to_so3(v[:9].reshape(3, 3, order="F"))
    return R, w


def _null_space_candidates(q, Z, width, n_starts=NULL_STARTS):
    """Polished rotations started from random points of the near-null space of ``Z``.

    When the dual optimum has several null vectors the leading eigenvector mixes
    them and its projection onto SO(3) can polish into a poor local minimum.
    """
    w, V = np.linalg.eigh(Z)
    N = V[:, w <= w[0] + width]
    if N.shape[1] < 2:
        return []
    rng = np.random.default_rng(0)
    out = []
    for c in np.vstack([np.eye(N.shape[1]), rng.standard_normal((n_starts, N.shape[1]))]):
        v = N @ c
        if abs(v[_Y]) < 1e-6:
            continue
        R0 = project_to_so3((v[:9] / v[_Y]).reshape(3, 3, order="F"))
        out.append(polish_rotation(q, R0))
    return out


def solve_rotation(q_tilde, warm_start=None, t_steps=(1e5, 1e7, 1e9)):
    """Globally minimise ``[vec R; 1]^T Q [vec R; 1]`` over SO(3).

    Args:
        q_tilde: 10x10 symmetric PSD matrix.
        warm_start: an SdpCertificate from a nearby problem, or a pair
            ``(R, lam_free)`` (``lam_free`` may be None). If the polished
            rotation can be certified with corrected multipliers the barrier
            method is skipped; otherwise it runs as usual. Either way the
            returned certificate is checked on this problem.
        t_steps: barrier parameters at which certification is attempted.

    Returns:
        ``(R, certificate)``.

    Raises:
        NotCertified: if no attempt yields a valid certificate.
    """
    q_tilde = np.asarray(q_tilde, dtype=float)
    scale = float(np.linalg.norm(q_tilde))
    if not np.isfinite(scale):
        raise ValueError("non-finite quadratic form")
    if scale == 0.0:
        scale = 1.0
    q = q_tilde / scale

    def build(R, lam, gamma, w, its):
        primal = float(_vecr(R) @ q_tilde @ _vecr(R))
        # for feasible q, ||q||^2 = 4, so q^T Z q >= 4 min(eig, 0)
        bound = gamma * scale + 4.0 * min(w[0], 0.0) * scale
        return SdpCertificate(
            lam=_full_lambda(lam, gamma) * scale,
            gamma=gamma * scale,
            min_eig_Z=float(w[0]),
            second_eig_Z=float(w[1]),
            duality_gap=primal - bound,
            primal=primal,
            extracted_rotation=Rotation(R),
            scale=scale,
            barrier_iterations=its,
        )

    if warm_start is not None:
        if isinstance(warm_start, SdpCertificate):
            R0, lam0 = warm_start.extracted_rotation.m, warm_start.lam[_FREE]
        else:
            R0, lam0 = warm_start
            lam0 = np.zeros(len(_FREE)) if lam0 is None else np.asarray(lam0)
        R, _ = polish_rotation(q, np.asarray(getattr(R0, "m", R0)))
        lam, gamma, w = certify_rotation(q, R, lam0 / scale)
        cert = build(R, lam, gamma, w, 0)
        if cert.valid:
            return R, cert

    x0 = None
    t0 = 1.0
    its = 0
    cert = None
    best = None
    for t_final in t_steps:
        lam_b, gamma_b, Z, k = barrier_dual(q, t_final=t_final, x0=x0, t0=t0)
        t0 = t_final
        its += k
        x0 = np.append(lam_b, gamma_b)
        R, w = _extract(Z)
        if R is None:
            continue
        R, f = polish_rotation(q, R)
        for Rc, fc in _null_space_candidates(q, Z, 10.0 / t_final):
            if fc < f:
                R, f = Rc, fc
        lam, gamma, w = certify_rotation(q, R, lam_b)
        cert = build(R, lam, gamma, w, its)
        if best is None or cert.min_eig_Z > best[1].min_eig_Z:
            best = (R, cert)
        if cert.valid:
            return R, cert
        if w[1] <= w[0] + MULTIPLICITY_TOL and w[0] >= -MIN_EIG_TOL:
            # certified optimum but not unique; more accuracy will not help
            break
    if best is None:
        raise NotCertified("dual solution has no usable null vector")
    R, cert = best
    raise NotCertified(
        f"relaxation not certified (min eig {cert.min_eig_Z:.3e}, "
        f"second eig {cert.second_eig_Z:.3e}, gap {cert.duality_gap:.3e})",
        cert,
    )


def solve_se3_global(qform, warm_start=None):
    """Global minimiser of a registration :class:`~sim3cal.cost.QuadraticForm`.

    Returns:
        ``(RigidTransform, SdpCertificate)``; the translation is the closed
        form optimum for the certified rotation.

    Raises:
        NotCertified: carrying the best available certificate.
    """
    R, cert = solve_rotation(qform.q_tilde, warm_start=warm_start)
    return RigidTransform(Rotation(R), qform.translation(R)), cert
