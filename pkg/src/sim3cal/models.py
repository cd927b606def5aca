"""Spherical-coordinate calibration models used as baselines.

Both models act on a measurement ``(rho, theta, phi)`` and return a
corrected Cartesian point. The measured elevation is discarded: the
3-parameter model replaces it by the absolute elevation ``dtheta`` of the
beam, so ``dtheta`` is the beam's true elevation rather than an offset.

* 3-parameter model ``(drho, dtheta, dphi)``: range offset, beam elevation,
  azimuth offset.
* 6-parameter model adds a range scale ``s`` and an origin offset ``h``
  (horizontal, rotating with the head) and ``v`` (vertical).
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .liegroup import SphericalPoint, cartesian_to_spherical, spherical_to_cartesian


@dataclass(frozen=True)
class Bl1Params:
    """Range offset (m), beam elevation (rad) and azimuth offset (rad)."""

    drho: float = 0.0
    dtheta: float = 0.0
    dphi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> "Bl1Params":
        return cls(*map(float, a))

    def to_dict(self) -> dict:
        return {"drho": self.drho, "dtheta": self.dtheta, "dphi": self.dphi}


@dataclass(frozen=True)
class Bl2Params:
    """Bl1Params plus range scale ``s``, horizontal ``h`` and vertical ``v`` origin offsets."""

    drho: float = 0.0
    dtheta: float = 0.0
    dphi: float = 0.0
    s: float = 1.0
    h: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("range scale must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> "Bl2Params":
        return cls(*map(float, a))

    def to_dict(self) -> dict:
        return {"drho": self.drho, "dtheta": self.dtheta, "dphi": self.dphi,
                "s": self.s, "h": self.h, "v": self.v}


def _sph(p):
    if isinstance(p, SphericalPoint):
        return np.array([p.rho, p.theta, p.phi])
    return np.asarray(p, dtype=float)


def bl1_apply(p, a: Bl1Params) -> np.ndarray:
    """Corrected point(s) for measurement(s) ``p`` under the 3-parameter model.

    ``p`` is a SphericalPoint or an array ``(..., 3)`` of ``(rho, theta, phi)``.
    """
    sp = _sph(p)
    return spherical_to_cartesian(sp[..., 0] + a.drho, a.dtheta, sp[..., 2] - a.dphi)


def bl2_apply(p, a: Bl2Params) -> np.ndarray:
    """Corrected point(s) for measurement(s) ``p`` under the 6-parameter model."""
    sp = _sph(p)
    r = a.s * sp[..., 0] + a.drho
    psi = sp[..., 2] - a.dphi
    ct = np.cos(a.dtheta)
    return np.stack([
        r * ct * np.sin(psi) - a.h * np.cos(psi),
        r * ct * np.cos(psi) + a.h * np.sin(psi),
        r * np.sin(a.dtheta) + a.v * np.ones_like(psi),
    ], axis=-1)


def bl2_apply_matrix_form(p, a: Bl2Params) -> np.ndarray:
    """Same as :func:`bl2_apply` but written as ``R1 (R2 t1 + t2)`` for one point."""
    rho, _, phi = _sph(p)
    psi = phi - a.dphi
    R1 = np.array([[np.sin(psi), -np.cos(psi), 0.0],
                   [np.cos(psi), np.sin(psi), 0.0],
                   [0.0, 0.0, 1.0]])
    R2 = np.array([[np.cos(a.dtheta), 0.0, -np.sin(a.dtheta)],
                   [0.0, 1.0, 0.0],
                   [np.sin(a.dtheta), 0.0, np.cos(a.dtheta)]])
    t1 = np.array([a.s * rho + a.drho, 0.0, 0.0])
    t2 = np.array([0.0, a.h, a.v])
    return R1 @ (R2 @ t1 + t2)


def apply_model(points, params) -> np.ndarray:
    """Correct Cartesian points with a Bl1Params or Bl2Params (via spherical coordinates)."""
    sp = cartesian_to_spherical(points)
    if isinstance(params, Bl2Params):
        return bl2_apply(sp, params)
    return bl1_apply(sp, params)
