"""Rotations, rigid and similarity transforms, and spherical coordinates.

All value types are frozen dataclasses holding numpy arrays that are marked
read-only, so they can be shared freely.

Spherical coordinates follow the sensor convention used by the baseline
models::

    x = rho * cos(theta) * sin(phi)
    y = rho * cos(theta) * cos(phi)
    z = rho * sin(theta)

so the azimuth ``phi`` is measured from the +y axis towards +x, i.e.
``phi = atan2(x, y)``. Note the argument order: most libraries use
``atan2(y, x)`` and measure from +x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoint

ORTHO_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def project_to_so3(m) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    m = np.asarray(m, dtype=float)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    wx, wy, wz = np.asarray(w, dtype=float)
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def _so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    K = hat(w)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th**2 * K @ K


@dataclass(frozen=True, eq=False)
class Rotation:
    """An element of SO(3) stored as a 3x3 matrix.

    Construction from raw data re-projects onto SO(3) with the polar
    decomposition, so small orthonormality drift is removed. Use
    :meth:`from_matrix` with ``project=False`` to require exact input.
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation has non-finite entries")
        err = np.abs(m.T @ m - np.eye(3)).max()
        if err > ORTHO_TOL or abs(np.linalg.det(m) - 1.0) > ORTHO_TOL:
            m = project_to_so3(m)
        object.__setattr__(self, "m", _frozen(m))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, m, project: bool = True) -> "Rotation":
        m = np.asarray(m, dtype=float)
        if not project:
            err = np.abs(m.T @ m - np.eye(3)).max()
            if err > ORTHO_TOL or abs(np.linalg.det(m) - 1.0) > ORTHO_TOL:
                raise ValueError("matrix is not a rotation within 1e-9")
        return cls(m)

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        """Rotation from a quaternion ``(w, x, y, z)``; it need not be unit."""
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        w, x, y, z = q / n
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(m)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(_so3_exp(axis * angle))

    @classmethod
    def from_rotvec(cls, w) -> "Rotation":
        return cls(_so3_exp(w))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Uniformly distributed rotation (normalised Gaussian quaternion)."""
        return cls.from_quaternion(rng.standard_normal(4))

    def as_quaternion(self) -> np.ndarray:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        m = self.m
        tr = np.trace(m)
        # pick the numerically largest component first
        cands = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
        k = int(np.argmax(cands))
        if k == 0:
            w = 0.5 * np.sqrt(max(1.0 + tr, 0.0))
            q = [w, (m[2, 1] - m[1, 2]) / (4 * w), (m[0, 2] - m[2, 0]) / (4 * w),
                 (m[1, 0] - m[0, 1]) / (4 * w)]
        else:
            i = k - 1
            j, l = (i + 1) % 3, (i + 2) % 3
            r = np.sqrt(max(1.0 + m[i, i] - m[j, j] - m[l, l], 0.0))
            v = np.zeros(3)
            v[i] = 0.5 * r
            v[j] = (m[j, i] + m[i, j]) / (2 * r)
            v[l] = (m[l, i] + m[i, l]) / (2 * r)
            w = (m[l, j] - m[j, l]) / (2 * r)
            q = [w, *v]
        q = np.array(q)
        return q if q[0] >= 0 else -q

    def as_rotvec(self) -> np.ndarray:
        q = self.as_quaternion()
        s = np.linalg.norm(q[1:])
        if s < 1e-15:
            return 2.0 * q[1:]
        return 2.0 * np.arctan2(s, q[0]) * q[1:] / s

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(self.m @ other.m)
        return self.m @ np.asarray(other, dtype=float)

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T)

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic distance in radians."""
        c = (np.trace(self.m.T @ other.m) - 1.0) / 2.0
        # arccos is ill-conditioned near 0; use the skew part as well
        sk = self.m.T @ other.m
        s = 0.5 * np.linalg.norm([sk[2, 1] - sk[1, 2], sk[0, 2] - sk[2, 0], sk[1, 0] - sk[0, 1]])
        return float(np.arctan2(s, c))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """The map ``x -> s * R @ x + v`` with ``s > 0``."""

    s: float = 1.0
    r: Rotation = field(default_factory=Rotation.identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        s = float(self.s)
        if not (s > 0 and np.isfinite(s)):
            raise ValueError(f"scale must be positive and finite, got {self.s}")
        r = self.r if isinstance(self.r, Rotation) else Rotation(self.r)
        v = np.asarray(self.v, dtype=float).reshape(3)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", _frozen(v))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_matrix(cls, h) -> "SimilarityTransform":
        """Build from a 4x4 homogeneous matrix ``[[sR, v], [0, 1]]``."""
        h = np.asarray(h, dtype=float)
        a = h[:3, :3]
        s = float(np.cbrt(np.linalg.det(a)))
        return cls(s, Rotation(a / s), h[:3, 3])

    def matrix(self) -> np.ndarray:
        h = np.eye(4)
        h[:3, :3] = self.s * self.r.m
        h[:3, 3] = self.v
        return h

    def apply(self, x) -> np.ndarray:
        """Apply to one point ``(3,)`` or a batch ``(N, 3)``."""
        x = np.asarray(x, dtype=float)
        return self.s * x @ self.r.m.T + self.v

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self.compose(other)`` applies ``other`` first."""
        return SimilarityTransform(
            self.s * other.s,
            Rotation(self.r.m @ other.r.m),
            self.s * self.r.m @ other.v + self.v,
        )

    def inverse(self) -> "SimilarityTransform":
        rt = self.r.m.T
        return SimilarityTransform(1.0 / self.s, Rotation(rt), -(rt @ self.v) / self.s)

    def params(self) -> np.ndarray:
        """Flat parameter vector ``[s, rotvec(3), v(3)]``."""
        return np.concatenate([[self.s], self.r.as_rotvec(), self.v])

    def distance(self, other: "SimilarityTransform") -> float:
        """Max of |ds|, geodesic rotation angle and translation distance."""
        return max(
            abs(self.s - other.s),
            self.r.angle_to(other.r),
            float(np.linalg.norm(self.v - other.v)),
        )

    def to_dict(self) -> dict:
        return {"s": self.s, "R": self.r.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(d["s"], Rotation(np.array(d["R"])), np.array(d["v"]))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """The map ``x -> R @ x + v``."""

    r: Rotation = field(default_factory=Rotation.identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = self.r if isinstance(self.r, Rotation) else Rotation(self.r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", _frozen(np.asarray(self.v, dtype=float).reshape(3)))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.r.m.T + self.v

    def as_similarity(self, s: float = 1.0) -> SimilarityTransform:
        return SimilarityTransform(s, self.r, self.v)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(Rotation(self.r.m @ other.r.m), self.r.m @ other.v + self.v)

    def inverse(self) -> "RigidTransform":
        rt = self.r.m.T
        return RigidTransform(Rotation(rt), -(rt @ self.v))


@dataclass(frozen=True)
class SphericalPoint:
    """Range (m), elevation (rad) and azimuth from +y (rad)."""

    rho: float
    theta: float
    phi: float


def apply(h, x) -> np.ndarray:
    """Apply a similarity or rigid transform to a point or batch of points."""
    return h.apply(x)


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """The transform that applies ``b`` then ``a``."""
    return a.compose(b)


def inverse(h: SimilarityTransform) -> SimilarityTransform:
    return h.inverse()


def spherical_to_cartesian(rho, theta=None, phi=None) -> np.ndarray:
    """Cartesian point(s) from range, elevation and azimuth.

    Accepts scalars or broadcastable arrays; a :class:`SphericalPoint` may be
    passed as the only argument. Returns shape ``(..., 3)``.
    """
    if isinstance(rho, SphericalPoint):
        rho, theta, phi = rho.rho, rho.theta, rho.phi
    rho, theta, phi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, theta, phi)))
    ct = np.cos(theta)
    return np.stack([rho * ct * np.sin(phi), rho * ct * np.cos(phi), rho * np.sin(theta)], axis=-1)


def cartesian_to_spherical(x) -> np.ndarray:
    """Range, elevation and azimuth of point(s) ``x`` with shape ``(..., 3)``.

    Returns an array of shape ``(..., 3)`` holding ``(rho, theta, phi)``.
    At the poles the azimuth is undefined and 0 is returned.

    Raises:
        DegeneratePoint: if any input has zero norm.
    """
    x = np.asarray(x, dtype=float)
    rho = np.linalg.norm(x, axis=-1)
    if np.any(rho == 0):
        raise DegeneratePoint("zero-length vector has no spherical coordinates")
    horiz = np.hypot(x[..., 0], x[..., 1])
    # atan2 form is accurate near the poles where asin(z/rho) loses digits
    theta = np.arctan2(x[..., 2], horiz)
    phi = np.where(horiz == 0, 0.0, np.arctan2(x[..., 0], x[..., 1]))
    phi = np.where(phi == -np.pi, np.pi, phi)
    return np.stack([rho, theta, phi], axis=-1)


def to_spherical_point(x) -> SphericalPoint:
    rho, theta, phi = cartesian_to_spherical(x)
    return SphericalPoint(float(rho), float(theta), float(phi))
