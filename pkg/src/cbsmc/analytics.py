"""Closed-form coherence budget for motion-induced dephasing.

Small-velocity Gaussian disorder predicts a per-order interference contrast

    c_N = exp(-N^3 (kv/Gamma)^2 / 12),

which is not exponential in N; the associated critical order, phase-breaking
time, and coherence length are

    N_phi   = 3 (3 kv / 2 Gamma)^(-2/3)
    tau_phi = N_phi / Gamma
    L_phi   = (3 kv / 2 Gamma)^(-1/3) ell = sqrt(D tau_phi),

with the diffusion constant D = ell^2 Gamma / 3 (transport time 1/Gamma).
The mesoscopic condition L_phi > L translates into kv/Gamma < 1/b^3.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

_VALIDITY_KV_SQRT_N = 0.2     # kv sqrt(N) << Gamma
_OFF_RESONANT_FACTOR = 10.0   # |delta| >> sqrt(N) kv
_LOW_V_KV_SQRT_N = 0.1


class ValidityWarning(UserWarning):
    """Closed-form decay evaluated outside its stated validity domain."""


@dataclass(frozen=True)
class CoherenceBudget:
    """Analytic coherence scales for a given kv/Gamma and mean free path."""

    kv_over_gamma: float
    ell: float
    n_phi: float
    tau_phi: float        # units of 1/Gamma
    l_phi: float          # same units as ell
    diffusion: float      # ell^2 Gamma / 3
    b_max: float
    b_max_floor: int

    @property
    def l_phi_over_ell(self):
        return self.l_phi / self.ell


def contrast_decay(n_order, kv_over_gamma):
    """Analytic per-order contrast exp(-N^3 (kv/Gamma)^2 / 12).

    Valid for kv sqrt(N) << Gamma (or far off resonance); outside that
    domain a ValidityWarning is emitted and the value is still returned.
    """
    n_arr = np.asarray(n_order)
    if np.any(n_arr < 1):
        raise ValueError("scattering order must be >= 1")
    x = float(kv_over_gamma)
    if x < 0.0:
        raise ValueError("kv_over_gamma must be nonnegative")
    worst = x * math.sqrt(float(np.max(n_arr)))
    if worst > _VALIDITY_KV_SQRT_N:
        warnings.warn(
            f"kv*sqrt(N) = {worst:.3g} Gamma violates the smallness condition "
            f"kv*sqrt(N) << Gamma (threshold {_VALIDITY_KV_SQRT_N})",
            ValidityWarning,
            stacklevel=2,
        )
    return np.exp(-np.asarray(n_order, dtype=float) ** 3 * x * x / 12.0)


def critical_order(kv_over_gamma):
    """Order at which the analytic contrast has fallen to 1/e."""
    x = float(kv_over_gamma)
    if x < 0.0:
        raise ValueError("kv_over_gamma must be nonnegative")
    if x == 0.0:
        return math.inf
    return 3.0 * (1.5 * x) ** (-2.0 / 3.0)


def mesoscopic_bound(kv_over_gamma):
    """Largest optical thickness with L_phi > L: b_max = (Gamma/kv)^(1/3).

    Returns (b_max, floor(b_max)).
    """
    x = float(kv_over_gamma)
    if x < 0.0:
        raise ValueError("kv_over_gamma must be nonnegative")
    if x == 0.0:
        return math.inf, None
    b = x ** (-1.0 / 3.0)
    return b, int(math.floor(b))


def coherence_scales(kv_over_gamma, ell):
    """Full coherence budget at a given kv/Gamma and mean free path."""
    x = float(kv_over_gamma)
    if x <= 0.0:
        raise ValueError("kv_over_gamma must be positive for a finite budget")
    if ell <= 0.0:
        raise ValueError("mean free path must be positive")
    n_phi = critical_order(x)
    tau_phi = n_phi  # units 1/Gamma
    l_phi = (1.5 * x) ** (-1.0 / 3.0) * ell
    diffusion = ell**2 / 3.0
    b_max, b_floor = mesoscopic_bound(x)
    return CoherenceBudget(
        kv_over_gamma=x,
        ell=float(ell),
        n_phi=n_phi,
        tau_phi=tau_phi,
        l_phi=l_phi,
        diffusion=diffusion,
        b_max=b_max,
        b_max_floor=b_floor,
    )


@dataclass(frozen=True)
class CrossCheckRow:
    order: int
    mc: float
    stderr: float
    analytic: float
    ratio: float
    within_tolerance: bool
    binding: bool


@dataclass(frozen=True)
class CrossCheckReport:
    rows: tuple
    kv_over_gamma: float
    delta: float
    binding: bool         # False marks the comparison non-binding (domain mismatch)

    @property
    def all_within(self):
        return all(r.within_tolerance for r in self.rows if r.binding)


def mc_cross_check(estimate, kv_over_gamma, delta=None, rel_tol=0.05, n_sigma=3.0):
    """Compare Monte-Carlo per-order contrast against the analytic decay.

    A row is binding when the closed form applies there: either
    kv sqrt(N) <= 0.1 Gamma, or far off resonance |delta| >= 10 sqrt(N) kv.
    Rows outside the domain are reported but marked non-binding.
    """
    x = float(kv_over_gamma)
    if delta is None:
        delta = float(estimate.config.get("delta", 0.0)) if estimate.config else 0.0
    rows = []
    for i, n in enumerate(estimate.orders):
        if not estimate.present[i]:
            continue
        n = int(n)
        mc = float(estimate.contrast[i])
        se = float(estimate.stderr[i])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ValidityWarning)
            ref = float(contrast_decay(n, x))
        ratio = mc / ref if ref != 0.0 else math.inf
        tol = max(n_sigma * se, rel_tol * ref)
        binding = (x * math.sqrt(n) <= _LOW_V_KV_SQRT_N) or (
            abs(delta) >= _OFF_RESONANT_FACTOR * math.sqrt(n) * x
        )
        rows.append(
            CrossCheckRow(
                order=n,
                mc=mc,
                stderr=se,
                analytic=ref,
                ratio=ratio,
                within_tolerance=bool(abs(mc - ref) <= tol),
                binding=binding,
            )
        )
    return CrossCheckReport(
        rows=tuple(rows),
        kv_over_gamma=x,
        delta=float(delta),
        binding=all(r.binding for r in rows) if rows else False,
    )
