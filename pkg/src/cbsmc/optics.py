"""Resonant point-scatterer optics in dimensionless units.

Internal unit system: Gamma = 1 (full resonance width), k = 1 (light
wavenumber), so detunings are delta/Gamma, velocities are in units of
Gamma/k, lengths in units of 1/k.  Densities rho are per k^3 volume.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.integrate import quad
from scipy.special import wofz

GAMMA = 1.0
WAVENUMBER = 1.0
SIGMA0 = 6.0 * np.pi / WAVENUMBER**2  # resonant cross-section, 3*lambda^2/(2*pi)

# Gauss-Hermite rule for Gaussian velocity convolutions.  Adequate while the
# Doppler width kv stays below ~Gamma/4; wider distributions under-resolve the
# natural linewidth, so the exact Voigt (Faddeeva) form takes over there.
_GH_NODES, _GH_WEIGHTS = hermgauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(np.pi)
_GH_KV_LIMIT = 0.25
_QUAD_TOL = 1e-8

_DILUTE_LIMIT = 0.1


class DiluteMediumWarning(UserWarning):
    """Effective-index input is outside the dilute regime |n-1| << 1."""


def resonance_factor(delta):
    """Dimensionless scattering resonance R(delta) = (i/2)/(delta + i/2).

    |R(0)| = 1, |R|^2 = 1/(1 + 4 delta^2), arg R = arctan(2 delta).
    """
    delta = np.asarray(delta, dtype=float)
    return 0.5j / (delta + 0.5j)


def scattering_phase_slope(delta):
    """d(arg R)/d(delta); equals 2/Gamma on resonance."""
    delta = np.asarray(delta, dtype=float)
    return 2.0 / (1.0 + 4.0 * delta**2)


def polarizability(delta):
    """Complex polarizability alpha(delta) = -3 pi Gamma k^-3 / (delta + i Gamma/2)."""
    delta = np.asarray(delta, dtype=float)
    return -3.0 * np.pi * GAMMA / WAVENUMBER**3 / (delta + 0.5j * GAMMA)


def cross_section(delta):
    """Total scattering cross-section, Lorentzian sigma0 / (1 + 4 delta^2)."""
    delta = np.asarray(delta, dtype=float)
    return SIGMA0 / (1.0 + 4.0 * delta**2)


def _gh_mean_polarizability(delta, kv):
    """<alpha(delta - u)> with u ~ Normal(0, kv^2), 64-node Gauss-Hermite."""
    delta = np.asarray(delta, dtype=float)
    shifts = np.sqrt(2.0) * kv * _GH_NODES
    return polarizability(delta[..., None] - shifts) @ _GH_WEIGHTS


def _voigt_mean_polarizability(delta, kv):
    """Exact Gaussian-convolved polarizability via the Faddeeva function.

    <1/(z - u)> over u ~ Normal(0, s^2) equals -i sqrt(pi/2) w(z/(s sqrt2))/s
    for Im z > 0, giving the Voigt profile for Im alpha.
    """
    delta = np.asarray(delta, dtype=float)
    z = (delta + 0.5j * GAMMA) / (np.sqrt(2.0) * kv)
    return (3.0 * np.pi * GAMMA / WAVENUMBER**3) * 1j * np.sqrt(np.pi / 2.0) / kv * wofz(z)


def _quad_mean_polarizability(delta, kv):
    """Adaptive-quadrature Gaussian convolution, relative tolerance 1e-8."""
    delta = np.asarray(delta, dtype=float)

    def one(d):
        def re_part(t):
            return np.real(polarizability(d - np.sqrt(2.0) * kv * t)) * np.exp(-t * t)

        def im_part(t):
            return np.imag(polarizability(d - np.sqrt(2.0) * kv * t)) * np.exp(-t * t)

        re = quad(re_part, -np.inf, np.inf, epsrel=_QUAD_TOL, epsabs=0.0)[0]
        im = quad(im_part, -np.inf, np.inf, epsrel=_QUAD_TOL, epsabs=0.0)[0]
        return (re + 1j * im) / np.sqrt(np.pi)

    if delta.ndim == 0:
        return one(float(delta))
    out = np.array([one(d) for d in delta.ravel()])
    return out.reshape(delta.shape)


def _lorentz_half_width(vdist):
    # Lorentzian 1D marginal of scale gamma_v adds 2 k gamma_v to the full width.
    return 0.5 * GAMMA + WAVENUMBER * vdist.gamma_v


def mean_polarizability(delta, vdist, method="auto"):
    """Velocity-averaged complex polarizability <alpha(delta - k.v)>.

    The average runs over the 1D projection of the velocity distribution.
    ``method`` selects the Gaussian-convolution backend: "auto" uses
    Gauss-Hermite below kv = Gamma/4 and the exact Voigt form above,
    "gh"/"voigt"/"quad" force a backend (quad is the slow oracle).
    """
    delta = np.asarray(delta, dtype=float)
    if vdist.kind == "static" or vdist.v == 0.0:
        return polarizability(delta)
    if vdist.kind == "lorentz":
        # Lorentzian (x) Lorentzian: widths add, area is preserved.
        return -3.0 * np.pi * GAMMA / WAVENUMBER**3 / (delta + 1j * _lorentz_half_width(vdist))
    kv = WAVENUMBER * vdist.v
    if method == "auto":
        method = "gh" if kv <= _GH_KV_LIMIT else "voigt"
    if method == "gh":
        return _gh_mean_polarizability(delta, kv)
    if method == "voigt":
        return _voigt_mean_polarizability(delta, kv)
    if method == "quad":
        return _quad_mean_polarizability(delta, kv)
    raise ValueError(f"unknown convolution method {method!r}")


def mean_cross_section(delta, vdist, method="auto"):
    """Velocity-averaged cross-section <sigma(delta - k.v)> = k Im <alpha>."""
    return WAVENUMBER * np.imag(mean_polarizability(delta, vdist, method=method))


def mean_free_path(rho, delta, vdist):
    """Scattering mean free path 1/(rho <sigma>); rho must be positive."""
    if rho <= 0.0:
        raise ValueError(f"density must be positive, got rho={rho}")
    return 1.0 / (rho * mean_cross_section(delta, vdist))


def effective_index(rho, delta, vdist):
    """Effective refractive index n = 1 + (rho/2) <alpha>, dilute regime."""
    if rho <= 0.0:
        raise ValueError(f"density must be positive, got rho={rho}")
    n = 1.0 + 0.5 * rho * mean_polarizability(delta, vdist)
    if np.max(np.abs(n - 1.0)) > _DILUTE_LIMIT:
        warnings.warn(
            f"|n-1| = {np.max(np.abs(n - 1.0)):.3g} exceeds the dilute regime",
            DiluteMediumWarning,
            stacklevel=2,
        )
    return n


def index_shift(rho, delta, vdist):
    """Complex wavenumber shift k*(n-1); its imaginary part equals 1/(2 ell)."""
    return 0.5 * WAVENUMBER * rho * mean_polarizability(delta, vdist)


def dephasing_estimate(delta, kv_over_gamma, ell, vdist=None):
    """Single-event phase difference estimate between reversed paths.

    Returns [d(arg R)/dw + k ell d(Re n)/dw] * kv.  The bracket is the
    transport-time-like factor; on resonance it equals 1/Gamma, so the
    estimate reduces to kv/Gamma there.
    """
    if kv_over_gamma < 0.0:
        raise ValueError("kv_over_gamma must be nonnegative")
    if kv_over_gamma == 0.0:
        return 0.0
    if vdist is None:
        from .velocity import VelocityDistribution

        vdist = VelocityDistribution.gaussian(kv_over_gamma)
    # rho consistent with the supplied mean free path at this detuning
    rho = 1.0 / (ell * mean_cross_section(delta, vdist))
    h = 1e-4 * max(1.0, abs(delta))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiluteMediumWarning)
        dn = (
            effective_index(rho, delta + h, vdist) - effective_index(rho, delta - h, vdist)
        ) / (2.0 * h)
    bracket = scattering_phase_slope(delta) + WAVENUMBER * ell * np.real(dn)
    return float(bracket * kv_over_gamma)
