"""Scattering-medium geometry: semi-infinite slab and uniform sphere.

The probe beam always enters along +z.  The slab occupies z > 0 with its
boundary plane at z = 0; the sphere of radius R is centered at the origin
and the beam enters at the south pole (0, 0, -R), i.e. along a diameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import SIGMA0

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > _NORM_TOL:
            raise ValueError("ray direction must be normalized to 1e-12")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class MediumGeometry:
    """Uniform medium, either a semi-infinite slab or a sphere.

    ``rho`` is the number density (units k^3).  For the sphere the
    on-resonance static optical thickness along a diameter is
    b = 2 R / ell0 with ell0 = 1/(rho sigma0); for the slab b is infinite.
    """

    kind: str
    rho: float
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("slab", "sphere"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.rho <= 0.0:
            raise ValueError("density must be positive")
        if self.kind == "sphere":
            if self.radius is None or self.radius <= 0.0:
                raise ValueError("sphere requires a positive radius")

    @classmethod
    def slab(cls, k_ell0=1000.0):
        """Semi-infinite half-space with resonant mean free path k_ell0 / k."""
        return cls("slab", rho=1.0 / (SIGMA0 * k_ell0))

    @classmethod
    def sphere(cls, b, k_ell0=1000.0):
        """Uniform sphere of on-resonance diameter optical thickness b."""
        if b <= 0.0 or not np.isfinite(b):
            raise ValueError("sphere optical thickness b must be positive and finite")
        ell0 = k_ell0
        return cls("sphere", rho=1.0 / (SIGMA0 * ell0), radius=0.5 * b * ell0)

    @property
    def ell0(self):
        """Static on-resonance mean free path."""
        return 1.0 / (self.rho * SIGMA0)

    @property
    def b(self):
        """On-resonance static optical thickness (diameter for the sphere)."""
        if self.kind == "slab":
            return np.inf
        return 2.0 * self.radius / self.ell0

    @property
    def entry_point(self):
        if self.kind == "slab":
            return np.zeros(3)
        return np.array([0.0, 0.0, -self.radius])

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        if self.kind == "slab":
            return p[..., 2] >= 0.0
        return (p * p).sum(axis=-1) <= self.radius**2 * (1.0 + 1e-12)

    def distance_to_boundary(self, point, direction):
        """Distance from an interior point to the exit along a direction.

        Broadcasts over leading axes; returns inf where the ray never exits
        (slab, non-descending directions).
        """
        p = np.asarray(point, dtype=float)
        d = np.asarray(direction, dtype=float)
        if self.kind == "slab":
            z = p[..., 2]
            dz = d[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(dz < 0.0, z / np.where(dz < 0.0, -dz, 1.0), np.inf)
            return t
        pd = (p * d).sum(axis=-1)
        disc = pd * pd + self.radius**2 - (p * p).sum(axis=-1)
        disc = np.maximum(disc, 0.0)
        return -pd + np.sqrt(disc)


def optical_depth_to_boundary(geom, ray, ell):
    """Optical depth along a ray from an interior point to the boundary."""
    if not geom.contains(ray.origin):
        raise ValueError("ray origin lies outside the medium")
    return geom.distance_to_boundary(ray.origin, ray.direction) / ell


def sample_step(geom, ray, ell, rng):
    """Exponential free path; returns the next point or None on escape."""
    if not geom.contains(ray.origin):
        raise ValueError("ray origin lies outside the medium")
    s = rng.exponential(ell)
    if s >= geom.distance_to_boundary(ray.origin, ray.direction):
        return None
    return ray.origin + s * ray.direction


def sample_isotropic_direction(rng, size=None):
    """Uniform direction on the unit sphere; shape (3,) or (size, 3)."""
    n = 1 if size is None else int(size)
    u = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    st = np.sqrt(1.0 - u * u)
    out = np.stack([st * np.cos(phi), st * np.sin(phi), u], axis=-1)
    return out[0] if size is None else out
