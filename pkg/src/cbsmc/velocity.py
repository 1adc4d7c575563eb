"""Atomic velocity distributions and Doppler kinematics.

Velocities are in units of Gamma/k, so a 1D rms velocity v means kv/Gamma = v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# FWHM of a unit-rms Gaussian; maps the reported v label onto the
# Lorentz-like FWHM velocity v0.
FWHM_PER_RMS = np.sqrt(8.0 * np.log(2.0))

_KINDS = ("static", "gaussian", "lorentz")


@dataclass(frozen=True)
class VelocityDistribution:
    """Scatterer velocity model: static, Gaussian, or isotropic Lorentz-like.

    ``v`` is the distribution label in units of Gamma/k.  For the Gaussian it
    is the 1D rms velocity (per-component standard deviation).  For the
    Lorentz-like case the same label maps onto the FWHM velocity
    v0 = v*sqrt(8 ln 2); the distribution is the isotropic multivariate
    Cauchy whose projection on any axis is Lorentzian with scale
    gamma_v = v0/2.  Cauchy has no finite rms: v is a label there, never a
    moment.
    """

    kind: str
    v: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown velocity kind {self.kind!r}; expected one of {_KINDS}")
        if self.v < 0.0:
            raise ValueError(f"velocity scale must be nonnegative, got {self.v}")
        if self.kind == "static" and self.v != 0.0:
            raise ValueError("static distribution requires v = 0")

    @classmethod
    def static(cls):
        return cls("static", 0.0)

    @classmethod
    def gaussian(cls, v):
        return cls("gaussian", float(v))

    @classmethod
    def lorentz_like(cls, v=None, v0=None):
        """Build from the rms-equivalent label v or from the FWHM velocity v0."""
        if (v is None) == (v0 is None):
            raise ValueError("give exactly one of v or v0")
        if v is None:
            v = float(v0) / FWHM_PER_RMS
        return cls("lorentz", float(v))

    @property
    def v0(self):
        """FWHM of the 1D marginal (Lorentz-like parameterization)."""
        return self.v * FWHM_PER_RMS

    @property
    def gamma_v(self):
        """Lorentzian scale of the 1D marginal, v0/2."""
        return 0.5 * self.v0


def sample_velocity(dist, rng, size=None):
    """Draw scatterer velocities; returns shape (3,) or (size, 3).

    Lorentz-like uses a standard 3D normal divided by the magnitude of an
    independent scalar normal, scaled by gamma_v: the isotropic multivariate
    Cauchy, whose projection on any unit vector is 1D Cauchy(gamma_v).
    """
    n = 1 if size is None else int(size)
    if dist.kind == "static":
        out = np.zeros((n, 3))
    elif dist.kind == "gaussian":
        out = rng.normal(0.0, dist.v, (n, 3))
    else:
        g = rng.normal(0.0, 1.0, (n, 3))
        s = np.abs(rng.normal(0.0, 1.0, (n, 1)))
        out = dist.gamma_v * g / s
    return out[0] if size is None else out


def doppler_shift(k_in, k_out, vel):
    """Lab-frame frequency change (k_out - k_in) . v of one scattering event."""
    k_in = np.asarray(k_in, dtype=float)
    k_out = np.asarray(k_out, dtype=float)
    vel = np.asarray(vel, dtype=float)
    return ((k_out - k_in) * vel).sum(axis=-1)


def rest_frame_detuning(delta_lab, k_in, vel):
    """Detuning seen in the scatterer rest frame: delta_lab - k_in . v."""
    k_in = np.asarray(k_in, dtype=float)
    vel = np.asarray(vel, dtype=float)
    return np.asarray(delta_lab, dtype=float) - (k_in * vel).sum(axis=-1)
