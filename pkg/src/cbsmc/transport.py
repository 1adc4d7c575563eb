"""Multiple-scattering Monte-Carlo engine with Doppler frequency chains.

A photon enters along +z, scatters off freshly drawn scatterer velocities,
and performs an exponential-step random walk with the mean free path
evaluated at the current lab frequency.  Every visited order N contributes
to the backscattered signal through next-event estimation: the incoherent
(ladder) weight is

    w_N = [prod_j sigma(delta_rest_j) / <sigma>(delta_lab_j)] * exp(-tau_exit)

and the interference ratio q_N = A_rev / A_dir is evaluated at exact
backscattering, where both amplitudes are products of resonance factors at
rest-frame detunings, dispersive propagation factors exp(i k (n-1) r) over
internal segments, and attenuation-only boundary legs exp(-tau/2).  Paths
are importance-sampled from the incoherent dynamics, so q = 1 identically
for static scatterers and the per-order contrast is c_N = Re<w q>/<w>.

Index conventions used throughout (events are 0-based, order N has events
0..N-1, e = N-1 is the last event):

  step[j]    length of the segment INTO event j (step[0] = entry leg)
  S_in[j]    lab detuning of the segment into event j (S_in[0] = laser)
  b[j]       k_in_hat . v_j   (incoming projection at event j)
  a[j]       k_out_hat . v_j  (sampled outgoing projection)
  eps[j]     a[j] - b[j], the lab Doppler increment of event j
  cume[j]    sum of eps[0..j]
  d_out[j]   in-medium distance from event j to the boundary along -z

For the order-N contribution the sampled outgoing direction of event e is
replaced by the detector direction -z, so the last increment becomes
eps_det = -v_z[e] - b[e].  The reverse traversal enters along +z onto event
e and exits from event 0; its lab detuning on the geometric segment into
event j is delta + E - cume[j] with E = cume[e-1] + eps_det, and per-event
rest detunings follow from the reversed wavevectors.  At theta = 0 the
outgoing frequencies of both traversals coincide identically.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import optics
from .geometry import MediumGeometry, sample_isotropic_direction
from .optics import GAMMA, WAVENUMBER, cross_section, resonance_factor
from .velocity import VelocityDistribution, sample_velocity

_ZHAT = np.array([0.0, 0.0, 1.0])
_MINUS_ZHAT = np.array([0.0, 0.0, -1.0])

_MIN_ORDER_COUNT = 4          # orders with fewer paths are flagged absent
_LOG_WEIGHT_CAP = 400.0       # overflow guard for heavy-tailed weight chains
_TRUNCATION_LIMIT = 0.01


class TruncationWarning(UserWarning):
    """More than the allowed weight fraction sits beyond max_order."""


# ---------------------------------------------------------------------------
# Path records (reference representation, one object per photon)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScatteringEvent:
    position: np.ndarray      # (3,)
    velocity: np.ndarray      # (3,)
    k_in: np.ndarray          # incoming wavevector, |k_in| = k
    delta_in: float           # lab detuning of the incoming segment


@dataclass(frozen=True)
class PhotonPathRecord:
    """One sampled multiple-scattering path (N >= 1 events)."""

    events: tuple
    entry_point: np.ndarray
    exit_direction: np.ndarray   # sampled direction after the last event
    delta_laser: float
    weight: float                # sigma-ratio chain x forced-collision factor
    escaped: bool

    @property
    def order(self):
        return len(self.events)

    @property
    def segment_detunings(self):
        """Lab detunings of the entry segment and internal segments."""
        return np.array([ev.delta_in for ev in self.events])

    def validate(self, geom=None, tol=1e-10):
        """Check the direct-traversal Doppler chain and containment."""
        if self.order < 1:
            raise ValueError("path must contain at least one event")
        if self.weight < 0.0:
            raise ValueError("path weight must be nonnegative")
        for j, ev in enumerate(self.events):
            if abs(np.linalg.norm(ev.k_in) - WAVENUMBER) > 1e-9:
                raise ValueError(f"event {j}: |k_in| != k")
            if geom is not None and not geom.contains(ev.position):
                raise ValueError(f"event {j}: position outside the medium")
        for j in range(self.order - 1):
            ev, nxt = self.events[j], self.events[j + 1]
            expected = ev.delta_in + float((nxt.k_in - ev.k_in) @ ev.velocity)
            if abs(nxt.delta_in - expected) > tol:
                raise ValueError(f"Doppler chain broken between events {j} and {j + 1}")


def generate_path(geom, vdist, delta_laser, max_order, rng):
    """Sample one multiple-scattering path from the incoherent dynamics.

    The first collision is forced (weight 1 - exp(-tau_chord), exactly 1 for
    the slab) so every path has N >= 1; afterwards escape through the
    boundary terminates the walk normally.  Scatterer velocities are drawn
    from the bare distribution and the weight accumulates the per-event
    cross-section ratio sigma(rest)/<sigma>(lab).
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    shape = _Lineshape(geom.rho, vdist)
    pos = geom.entry_point.copy()
    direction = _ZHAT.copy()
    lab = float(delta_laser)
    log_w = 0.0
    events = []
    escaped = False
    for j in range(max_order):
        ell = 1.0 / shape.inv_ell(lab)
        dmax = float(geom.distance_to_boundary(pos, direction))
        if j == 0:
            p_fc = -np.expm1(-dmax / ell)
            s = -ell * np.log1p(-rng.uniform() * p_fc)
            log_w += np.log(p_fc)
        else:
            s = rng.exponential(ell)
            if s >= dmax:
                escaped = True
                break
        pos = pos + s * direction
        vel = sample_velocity(vdist, rng)
        rest = lab - float(direction @ vel) * WAVENUMBER
        log_w += np.log(cross_section(rest) * geom.rho / shape.inv_ell(lab))
        events.append(
            ScatteringEvent(
                position=pos.copy(),
                velocity=np.asarray(vel, dtype=float),
                k_in=WAVENUMBER * direction.copy(),
                delta_in=lab,
            )
        )
        new_dir = sample_isotropic_direction(rng)
        lab = lab + float((new_dir - direction) @ vel) * WAVENUMBER
        direction = new_dir
    return PhotonPathRecord(
        events=tuple(events),
        entry_point=geom.entry_point.copy(),
        exit_direction=direction.copy(),
        delta_laser=float(delta_laser),
        weight=float(np.exp(log_w)),
        escaped=escaped,
    )


def _exit_chain(path, exit_direction):
    """Per-event Doppler increments with the last outgoing leg replaced."""
    k_out_last = WAVENUMBER * np.asarray(exit_direction, dtype=float)
    eps = []
    for j, ev in enumerate(path.events):
        if j + 1 < path.order:
            k_out = path.events[j + 1].k_in
        else:
            k_out = k_out_last
        eps.append(float((k_out - ev.k_in) @ ev.velocity))
    return np.array(eps)


def direct_amplitude(path, geom, vdist, exit_direction):
    """Complex amplitude of the path traversed in sampled order.

    Product of resonance factors at rest-frame detunings, dispersive
    propagation exp(i k (n-1) r) over internal segments, and half-depth
    attenuation on the entry and exit boundary legs.  The common vacuum
    phase exp(i k r) is omitted: it is identical for the direct and
    reverse traversals and cancels in every contrast ratio.
    """
    shape = _Lineshape(geom.rho, vdist)
    eps = _exit_chain(path, exit_direction)
    exit_lab = path.delta_laser + float(eps.sum())
    ln_a = 0.0j
    for j, ev in enumerate(path.events):
        rest = ev.delta_in - float(ev.k_in @ ev.velocity)
        ln_a += np.log(resonance_factor(rest))
        if j + 1 < path.order:
            nxt = path.events[j + 1]
            seg = float(np.linalg.norm(nxt.position - ev.position))
            ln_a += 1j * shape.kappa(nxt.delta_in) * seg
    d_first = float(geom.distance_to_boundary(path.events[0].position, _MINUS_ZHAT))
    d_last = float(geom.distance_to_boundary(path.events[-1].position, _MINUS_ZHAT))
    ln_a -= 0.5 * d_first * shape.inv_ell(path.delta_laser)
    ln_a -= 0.5 * d_last * shape.inv_ell(exit_lab)
    return complex(np.exp(ln_a))


def reverse_amplitude(path, geom, vdist, exit_direction):
    """Amplitude of the same scatterers traversed in reverse order.

    The reverse traversal enters along +z onto the last scatterer, follows
    the reversed internal wavevectors, exits from the first scatterer, and
    recomputes the Doppler chain from the laser frequency.  At exact
    backscattering its outgoing frequency equals the direct one.
    """
    shape = _Lineshape(geom.rho, vdist)
    eps = _exit_chain(path, exit_direction)
    cume = np.cumsum(eps)
    total = float(cume[-1])
    exit_lab = path.delta_laser + total
    n = path.order
    ln_a = 0.0j
    for j in range(n - 1, -1, -1):
        ev = path.events[j]
        lab_in = path.delta_laser + (total - float(cume[j]))
        if j == n - 1:
            k_in_rev = WAVENUMBER * _ZHAT
        else:
            k_in_rev = -path.events[j + 1].k_in
            seg = float(np.linalg.norm(path.events[j + 1].position - ev.position))
            ln_a += 1j * shape.kappa(lab_in) * seg
        rest = lab_in - float(k_in_rev @ ev.velocity)
        ln_a += np.log(resonance_factor(rest))
    d_first = float(geom.distance_to_boundary(path.events[0].position, _MINUS_ZHAT))
    d_last = float(geom.distance_to_boundary(path.events[-1].position, _MINUS_ZHAT))
    ln_a -= 0.5 * d_last * shape.inv_ell(path.delta_laser)
    ln_a -= 0.5 * d_first * shape.inv_ell(exit_lab)
    return complex(np.exp(ln_a))


def path_interference(path, geom, vdist, exit_direction=_MINUS_ZHAT):
    """Interference ratio q = A_rev/A_dir and detector weight of one path."""
    a_dir = direct_amplitude(path, geom, vdist, exit_direction)
    a_rev = reverse_amplitude(path, geom, vdist, exit_direction)
    shape = _Lineshape(geom.rho, vdist)
    eps = _exit_chain(path, exit_direction)
    exit_lab = path.delta_laser + float(eps.sum())
    d_last = float(geom.distance_to_boundary(path.events[-1].position, _MINUS_ZHAT))
    w = path.weight * float(np.exp(-d_last * shape.inv_ell(exit_lab)))
    return a_rev / a_dir, w


# ---------------------------------------------------------------------------
# Lineshape: velocity-convolved extinction and index shift
# ---------------------------------------------------------------------------


class _Lineshape:
    """Velocity-convolved k(n-1) and 1/ell at arbitrary lab detunings.

    Static and Lorentz-like inputs use closed forms.  Gaussian inputs are
    exact per-point; optionally a tan-warped interpolation table accelerates
    the engine hot path (error ~1e-9 relative near the line center).
    """

    def __init__(self, rho, vdist, center=0.0, reach=None, tabulated=False, points=24001):
        self.rho = float(rho)
        self.vdist = vdist
        self._table = None
        if tabulated and vdist.kind == "gaussian" and vdist.v > 0.0:
            if reach is None:
                raise ValueError("tabulated lineshape needs a detuning reach")
            width = 0.5 * GAMMA + vdist.v
            umax = np.arctan(reach / width)
            grid = center + width * np.tan(np.linspace(-umax, umax, points))
            vals = 0.5 * WAVENUMBER * rho * optics.mean_polarizability(grid, vdist)
            self._table = (grid, np.real(vals), np.imag(vals))

    def kappa(self, lab):
        """Complex wavenumber shift k(n-1); Im kappa = 1/(2 ell)."""
        if self._table is not None:
            grid, re, im = self._table
            lab = np.asarray(lab, dtype=float)
            return np.interp(lab, grid, re) + 1j * np.interp(lab, grid, im)
        return 0.5 * WAVENUMBER * self.rho * optics.mean_polarizability(lab, self.vdist)

    def inv_ell(self, lab):
        """Extinction rate 1/ell(lab) = rho <sigma>."""
        if self._table is not None:
            grid, _, im = self._table
            return 2.0 * np.interp(np.asarray(lab, dtype=float), grid, im)
        return 2.0 * np.imag(self.kappa(lab))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class ContrastEstimate:
    """Per-order CBS contrast with statistics and the enhancement factor."""

    orders: np.ndarray
    weight: np.ndarray            # mean ladder weight per photon and order
    contrast: np.ndarray          # c_N, NaN where an order is absent
    stderr: np.ndarray
    counts: np.ndarray
    present: np.ndarray
    enhancement: float
    enhancement_stderr: float
    truncation_fraction: float
    truncation_warning: bool
    n_photons: int
    config: dict = field(default_factory=dict)
    theta: np.ndarray | None = None
    interference: np.ndarray | None = None
    interference_stderr: np.ndarray | None = None
    angular_order: int | None = None
    wall_time: float = 0.0
    weight_clamps: int = 0
    path_q: np.ndarray | None = None   # terminal-order q per photon (diagnostics)

    def order_table(self):
        """Rows (order, weight, contrast, stderr) for populated orders."""
        rows = []
        for i, n in enumerate(self.orders):
            if self.present[i]:
                rows.append((int(n), float(self.weight[i]), float(self.contrast[i]),
                             float(self.stderr[i])))
        return rows


@dataclass
class WalkStats:
    """Frequency random-walk dispersion of the sampled Doppler chain."""

    orders: np.ndarray
    statistic: str                # "std" or "iqr"
    dispersion: np.ndarray
    n_photons: int


# ---------------------------------------------------------------------------
# Vectorized engine
# ---------------------------------------------------------------------------


class TransportEngine:
    """Batch Monte-Carlo estimator of per-order CBS contrast.

    Photons are processed in fixed batches; batch b of a run draws its
    randomness from a counter-based Philox stream keyed by
    (seed, point_index << 32 | b), so any partition of batches across
    workers reproduces identical per-batch partials, and the reduction
    runs in batch order: results are bitwise independent of worker count.
    """

    def __init__(self, geom, vdist, delta, max_order=60, theta_grid=None,
                 include_single_coherent=False, local_frequency_stepping=True,
                 laser_linewidth=0.0, angular_order=None, batch_size=8192,
                 tabulated=True):
        if max_order < 1:
            raise ValueError("max_order must be >= 1")
        self.geom = geom
        self.vdist = vdist
        self.delta = float(delta)
        self.max_order = int(max_order)
        self.theta_grid = None if theta_grid is None else np.asarray(theta_grid, dtype=float)
        self.include_single_coherent = bool(include_single_coherent)
        self.local_frequency_stepping = bool(local_frequency_stepping)
        self.laser_linewidth = float(laser_linewidth)
        self.angular_order = angular_order
        self.batch_size = int(batch_size)
        reach = (12.0 * vdist.v * np.sqrt(2.0 * max_order)
                 + 8.0 * self.laser_linewidth + 2.0 * GAMMA)
        self.shape = _Lineshape(geom.rho, vdist, center=self.delta, reach=reach,
                                tabulated=tabulated)

    # -- randomness ---------------------------------------------------------

    def _rng(self, seed, point_index, batch_index):
        key = np.array([np.uint64(seed),
                        (np.uint64(point_index) << np.uint64(32)) | np.uint64(batch_index)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    # -- walk ---------------------------------------------------------------

    def _walk_batch(self, n, rng):
        """Random walk of n photons; returns per-event history arrays."""
        geom, vdist = self.geom, self.vdist
        M = self.max_order
        pos = np.tile(geom.entry_point, (n, 1))
        direction = np.tile(_ZHAT, (n, 1))
        delta0 = np.full(n, self.delta)
        if self.laser_linewidth > 0.0:
            delta0 = delta0 + self.laser_linewidth * rng.normal(0.0, 1.0, n)
        lab = delta0.copy()
        alive = np.ones(n, dtype=bool)
        log_w = np.zeros(n)
        cume = np.zeros(n)
        reached = np.zeros(n, dtype=np.int64)
        clamps = 0

        h = {
            "step": np.zeros((n, M)), "S_in": np.zeros((n, M)),
            "a": np.zeros((n, M)), "b": np.zeros((n, M)), "vz": np.zeros((n, M)),
            "cume": np.zeros((n, M)), "lnR_d": np.zeros((n, M), complex),
            "log_w": np.zeros((n, M)), "d_out": np.zeros((n, M)),
            "pos": np.zeros((n, M, 3)), "vel": None,
        }
        store_vel = np.zeros((n, M, 3))

        for j in range(M):
            step_lab = lab if self.local_frequency_stepping else delta0
            ell = 1.0 / self.shape.inv_ell(step_lab)
            dmax = geom.distance_to_boundary(pos, direction)
            if j == 0:
                p_fc = -np.expm1(-dmax / ell)
                u = rng.random(n)
                s = -ell * np.log1p(-u * p_fc)
                log_w = log_w + np.where(p_fc > 0.0, np.log(p_fc), -np.inf)
            else:
                s = rng.exponential(1.0, n) * ell
                escaped = alive & (s >= dmax)
                alive = alive & ~escaped
            pos = np.where(alive[:, None], pos + s[:, None] * direction, pos)

            vel = sample_velocity(vdist, rng, size=n)
            b = np.einsum("ij,ij->i", direction, vel) * WAVENUMBER
            rest = lab - b
            ratio = cross_section(rest) * geom.rho / self.shape.inv_ell(lab)
            new_log_w = log_w + np.log(ratio)
            over = new_log_w > _LOG_WEIGHT_CAP
            if np.any(over & alive):
                clamps += int(np.count_nonzero(over & alive))
                new_log_w = np.minimum(new_log_w, _LOG_WEIGHT_CAP)

            new_dir = sample_isotropic_direction(rng, size=n)
            a = np.einsum("ij,ij->i", new_dir, vel) * WAVENUMBER
            eps = a - b
            new_cume = cume + eps

            h["step"][alive, j] = s[alive]
            h["S_in"][alive, j] = lab[alive]
            h["a"][alive, j] = a[alive]
            h["b"][alive, j] = b[alive]
            h["vz"][alive, j] = vel[alive, 2] * WAVENUMBER
            h["cume"][alive, j] = new_cume[alive]
            h["lnR_d"][alive, j] = np.log(resonance_factor(rest[alive]))
            h["log_w"][alive, j] = new_log_w[alive]
            h["d_out"][alive, j] = geom.distance_to_boundary(pos, _MINUS_ZHAT)[alive]
            h["pos"][alive, j] = pos[alive]
            store_vel[alive, j] = vel[alive]
            reached = reached + alive

            lab = np.where(alive, lab + eps, lab)
            cume = np.where(alive, new_cume, cume)
            log_w = np.where(alive, new_log_w, log_w)
            direction = np.where(alive[:, None], new_dir, direction)

        h["vel"] = store_vel
        h["reached"] = reached
        h["delta0"] = delta0
        h["alive"] = alive
        h["final_dir"] = direction
        h["clamps"] = clamps
        return h

    # -- per-order evaluation ------------------------------------------------

    def _eval_batch(self, h, collect_path_q=False):
        """Per-order (weight, weight*q) sums from one walked batch."""
        M = self.max_order
        reached = h["reached"]
        delta0 = h["delta0"]
        theta = self.theta_grid
        n_theta = 0 if theta is None else len(theta)

        W = np.zeros(M)
        S = np.zeros(M, complex)
        CNT = np.zeros(M, dtype=np.int64)
        AI = np.zeros(n_theta, complex)      # angular interference, orders >= 2
        AW = 0.0                             # its incoherent normalization
        AI2 = np.zeros(n_theta, complex)     # angular interference, order == 2
        AW2 = 0.0
        path_q = np.full(len(reached), np.nan, complex) if collect_path_q else None

        inv_ell_0 = self.shape.inv_ell(delta0)
        # direct-chain cumulatives; the reverse chain is rebuilt per order
        lnR_d_cum = np.cumsum(h["lnR_d"], axis=1)
        seg_kappa = h["step"].astype(complex)
        seg_kappa[:, 1:] *= self.shape.kappa(h["S_in"][:, 1:])
        seg_kappa[:, 0] = 0.0  # entry leg carries attenuation only
        seg_kappa_cum = np.cumsum(seg_kappa, axis=1)

        for N in range(1, M + 1):
            e = N - 1
            m = reached >= N
            cnt = int(np.count_nonzero(m))
            if cnt == 0:
                break
            d0 = delta0[m]
            b_e = h["b"][m, e]
            vz_e = h["vz"][m, e]
            eps_det = -vz_e - b_e
            cume_prev = h["cume"][m, e - 1] if e > 0 else np.zeros(cnt)
            E = cume_prev + eps_det
            exit_lab = d0 + E

            # reverse minus direct chains; for static scatterers the two are
            # identical sums and ln q vanishes to rounding
            ln_q = np.log(resonance_factor(d0 - vz_e)) - lnR_d_cum[m, e]
            if e > 0:
                T = d0[:, None] + E[:, None] - h["cume"][m, :e]       # (cnt, e)
                ln_q = ln_q + np.sum(np.log(resonance_factor(T + h["a"][m, :e])), axis=1)
                ln_q = ln_q + 1j * (
                    np.sum(h["step"][m, 1:N] * self.shape.kappa(T), axis=1)
                    - seg_kappa_cum[m, e]
                )
            inv_exit = self.shape.inv_ell(exit_lab)
            d_first = h["d_out"][m, 0]
            d_last = h["d_out"][m, e]
            ln_q = ln_q + 0.5 * (d_first - d_last) * (inv_ell_0[m] - inv_exit)

            q = np.exp(ln_q)
            w = np.exp(h["log_w"][m, e] - d_last * inv_exit)

            W[e] = w.sum()
            S[e] = (w * q).sum()
            CNT[e] = cnt
            if collect_path_q:
                term = m & (reached == N)
                path_q[term] = q[reached[m] == N]

            if n_theta and N >= 2:
                dr = h["pos"][m, 0] - h["pos"][m, e]
                phase = (np.sin(theta)[None, :] * dr[:, 0:1]
                         + (1.0 - np.cos(theta))[None, :] * dr[:, 2:3]) * WAVENUMBER
                contrib = (w * q)[:, None] * np.exp(1j * phase)
                AI += contrib.sum(axis=0)
                AW += w.sum()
                if N == 2:
                    AI2 += contrib.sum(axis=0)
                    AW2 += w.sum()

        # ladder weight still in flight at truncation (diagnostic)
        alive = h["alive"]
        trunc_w = 0.0
        if np.any(alive):
            lab_f = delta0[alive] + h["cume"][alive, M - 1]
            d_f = h["d_out"][alive, M - 1]
            trunc_w = float(np.exp(h["log_w"][alive, M - 1]
                                   - d_f * self.shape.inv_ell(lab_f)).sum())

        return {
            "W": W, "S": S, "CNT": CNT, "AI": AI, "AW": AW, "AI2": AI2, "AW2": AW2,
            "trunc_w": trunc_w, "alive": int(np.count_nonzero(alive)),
            "clamps": h["clamps"], "path_q": path_q,
        }

    def _run_batch(self, args):
        seed, point_index, batch_index, n, collect_path_q = args
        rng = self._rng(seed, point_index, batch_index)
        h = self._walk_batch(n, rng)
        out = self._eval_batch(h, collect_path_q=collect_path_q)
        out["batch_index"] = batch_index
        out["n"] = n
        return out

    # -- driver ---------------------------------------------------------------

    def _batch_plan(self, n_photons):
        b = min(self.batch_size, max(1, -(-n_photons // 16)))
        sizes = []
        left = n_photons
        while left > 0:
            sizes.append(min(b, left))
            left -= sizes[-1]
        return sizes

    def run(self, n_photons, seed=0, workers=1, point_index=0, collect_path_q=False,
            min_photons=1000):
        """Estimate per-order contrast from n_photons sampled paths."""
        if n_photons < min_photons:
            raise ValueError(f"photon budget must be >= {min_photons}, got {n_photons}")
        t0 = time.perf_counter()
        sizes = self._batch_plan(n_photons)
        jobs = [(seed, point_index, i, sz, collect_path_q) for i, sz in enumerate(sizes)]
        if workers > 1 and len(jobs) > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(workers) as pool:
                partials = pool.map(self._run_batch, jobs, chunksize=1)
        else:
            partials = [self._run_batch(j) for j in jobs]
        partials.sort(key=lambda p: p["batch_index"])
        return self._reduce(partials, n_photons, time.perf_counter() - t0)

    def _reduce(self, partials, n_photons, wall):
        M = self.max_order
        nb = len(partials)
        Wb = np.stack([p["W"] for p in partials])          # (nb, M)
        Sb = np.stack([p["S"] for p in partials])
        CNT = np.sum([p["CNT"] for p in partials], axis=0)
        W = Wb.sum(axis=0)
        S = Sb.sum(axis=0)

        present = (CNT >= _MIN_ORDER_COUNT) & (W > 0.0)
        contrast = np.full(M, np.nan)
        stderr = np.full(M, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.real(S) / W
        contrast[present] = c[present]
        if nb > 1:
            resid = np.real(Sb) - c[None, :] * Wb
            var = np.sum(resid**2, axis=0) / np.maximum(W, 1e-300) ** 2 * nb / (nb - 1)
            stderr[present] = np.sqrt(np.maximum(var[present], 0.0))

        n_min = 1 if self.include_single_coherent else 2
        num_b = np.real(Sb[:, n_min - 1:]).sum(axis=1)
        den_b = Wb.sum(axis=1)
        num, den = num_b.sum(), den_b.sum()
        enhancement = 1.0 + num / den if den > 0 else np.nan
        if nb > 1 and den > 0:
            resid = num_b - (num / den) * den_b
            e_var = np.sum(resid**2) / den**2 * nb / (nb - 1)
            enhancement_stderr = float(np.sqrt(max(e_var, 0.0)))
        else:
            enhancement_stderr = np.nan

        # geometric tail extrapolation of the per-order weights
        trunc_fraction = 0.0
        tail_window = 5
        if M > tail_window and W[M - 1] > 0.0 and W[M - 1 - tail_window] > 0.0:
            r = (W[M - 1] / W[M - 1 - tail_window]) ** (1.0 / tail_window)
            r = min(r, 0.999)
            tail = W[M - 1] * r / (1.0 - r)
            trunc_fraction = tail / (W.sum() + tail)
        trunc_warning = bool(trunc_fraction > _TRUNCATION_LIMIT)
        if trunc_warning:
            warnings.warn(
                f"truncated weight fraction {trunc_fraction:.2%} exceeds "
                f"{_TRUNCATION_LIMIT:.0%} at max_order={M}",
                TruncationWarning,
                stacklevel=2,
            )

        theta = self.theta_grid
        interference = interference_stderr = None
        if theta is not None:
            if self.angular_order == 2:
                AIb = np.stack([p["AI2"] for p in partials])
                AWb = np.array([p["AW2"] for p in partials])
            else:
                AIb = np.stack([p["AI"] for p in partials])
                AWb = np.array([p["AW"] for p in partials])
            AW = AWb.sum()
            AI = AIb.sum(axis=0)
            interference = np.real(AI) / AW if AW > 0 else np.full(len(theta), np.nan)
            if nb > 1 and AW > 0:
                resid = np.real(AIb) - interference[None, :] * AWb[:, None]
                var = np.sum(resid**2, axis=0) / AW**2 * nb / (nb - 1)
                interference_stderr = np.sqrt(np.maximum(var, 0.0))

        path_q = None
        if partials[0]["path_q"] is not None:
            path_q = np.concatenate([p["path_q"] for p in partials])

        return ContrastEstimate(
            orders=np.arange(1, M + 1),
            weight=W / n_photons,
            contrast=contrast,
            stderr=stderr,
            counts=CNT,
            present=present,
            enhancement=float(enhancement),
            enhancement_stderr=enhancement_stderr,
            truncation_fraction=float(trunc_fraction),
            truncation_warning=trunc_warning,
            n_photons=n_photons,
            theta=theta,
            interference=interference,
            interference_stderr=interference_stderr,
            angular_order=self.angular_order,
            wall_time=wall,
            weight_clamps=int(sum(p["clamps"] for p in partials)),
            path_q=path_q,
        )

    # -- frequency random walk ------------------------------------------------

    def walk_stats(self, n_photons, orders, seed=0):
        """Dispersion of the lab detuning after N events in a bulk medium.

        The boundary plays no role in the Doppler chain, so the walk runs
        unbounded.  Gaussian inputs report the standard deviation; the
        heavy-tailed Lorentz-like case has no finite second moment and
        reports the interquartile range instead.
        """
        orders = np.asarray(sorted(orders), dtype=int)
        if orders[-1] > self.max_order:
            raise ValueError("requested order beyond max_order")
        rng = self._rng(seed, 0, 0)
        n = int(n_photons)
        direction = np.tile(_ZHAT, (n, 1))
        shift = np.zeros(n)
        samples = {}
        for j in range(orders[-1]):
            vel = sample_velocity(self.vdist, rng, size=n)
            b = np.einsum("ij,ij->i", direction, vel)
            new_dir = sample_isotropic_direction(rng, size=n)
            a = np.einsum("ij,ij->i", new_dir, vel)
            shift = shift + (a - b) * WAVENUMBER
            direction = new_dir
            if j + 1 in orders:
                samples[j + 1] = shift.copy()
        if self.vdist.kind == "lorentz":
            stat = "iqr"
            disp = np.array([np.subtract(*np.percentile(samples[N], [75, 25]))
                             for N in orders])
        else:
            stat = "std"
            disp = np.array([samples[N].std() for N in orders])
        return WalkStats(orders=orders, statistic=stat, dispersion=disp, n_photons=n)

    # -- record extraction (debug / validation) -------------------------------

    def sample_records(self, n_photons, seed=0):
        """Walk a small batch and rebuild per-photon PhotonPathRecords."""
        rng = self._rng(seed, 0, 0)
        h = self._walk_batch(int(n_photons), rng)
        records = []
        for i in range(int(n_photons)):
            n_ev = int(h["reached"][i])
            if n_ev == 0:
                continue
            events = []
            prev = self.geom.entry_point
            for j in range(n_ev):
                p = h["pos"][i, j]
                step = h["step"][i, j]
                k_in = WAVENUMBER * (p - prev) / step
                events.append(ScatteringEvent(position=p.copy(),
                                              velocity=h["vel"][i, j].copy(),
                                              k_in=k_in,
                                              delta_in=float(h["S_in"][i, j])))
                prev = p
            records.append(PhotonPathRecord(
                events=tuple(events),
                entry_point=self.geom.entry_point.copy(),
                exit_direction=h["final_dir"][i].copy(),
                delta_laser=float(h["delta0"][i]),
                weight=float(np.exp(h["log_w"][i, n_ev - 1])),
                escaped=not bool(h["alive"][i]),
            ))
        return records


# ---------------------------------------------------------------------------
# Spec-level operations on a run configuration
# ---------------------------------------------------------------------------


def _engine_from_config(config, **overrides):
    kwargs = dict(
        geom=config.build_geometry(),
        vdist=config.build_velocity(),
        delta=config.delta,
        max_order=config.max_order,
        theta_grid=config.theta_grid,
        include_single_coherent=config.include_single_coherent,
        local_frequency_stepping=config.local_frequency_stepping,
        laser_linewidth=config.laser_linewidth,
    )
    kwargs.update(overrides)
    return TransportEngine(**kwargs)


def contrast_per_order(config):
    """Per-order contrast, weights, and enhancement for one configuration."""
    engine = _engine_from_config(config)
    est = engine.run(config.photons, seed=config.seed, workers=config.workers)
    est.config = config.to_dict()
    return est


def enhancement_factor(config):
    """CBS enhancement factor 1 + coherent/incoherent for one configuration."""
    return contrast_per_order(config).enhancement


def angular_profile(config, theta_grid, order=None):
    """Interference term versus backscattering angle, background-normalized."""
    engine = _engine_from_config(config, theta_grid=np.asarray(theta_grid, dtype=float),
                                 angular_order=order)
    est = engine.run(config.photons, seed=config.seed, workers=config.workers)
    est.config = config.to_dict()
    return est


def frequency_walk_stats(config, orders=None):
    """Detuning dispersion after N scattering events (bulk Doppler chain)."""
    engine = _engine_from_config(config)
    if orders is None:
        orders = [n for n in (1, 2, 4, 9, 16, 25, 36) if n <= config.max_order]
    return engine.walk_stats(config.photons, orders, seed=config.seed)


def profile_half_width(theta, interference):
    """Angle where the interference term first drops to half its peak."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(interference, dtype=float)
    peak = y[0]
    half = 0.5 * peak
    below = np.nonzero(y <= half)[0]
    if len(below) == 0:
        return np.nan
    i = below[0]
    if i == 0:
        return 0.0
    t0, t1, y0, y1 = theta[i - 1], theta[i], y[i - 1], y[i]
    return float(t0 + (half - y0) * (t1 - t0) / (y1 - y0))
