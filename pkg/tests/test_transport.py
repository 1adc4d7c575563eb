import warnings

import numpy as np
import pytest

from cbsmc import MediumGeometry, VelocityDistribution
from cbsmc.optics import resonance_factor
from cbsmc.transport import (
    PhotonPathRecord,
    ScatteringEvent,
    TransportEngine,
    TruncationWarning,
    _Lineshape,
    direct_amplitude,
    generate_path,
    path_interference,
    profile_half_width,
    reverse_amplitude,
)

MINUS_Z = np.array([0.0, 0.0, -1.0])


def quiet_run(engine, n, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return engine.run(n, **kw)


# -- path records ------------------------------------------------------------


def test_generate_path_chain_invariants(rng):
    geom = MediumGeometry.slab()
    vd = VelocityDistribution.gaussian(0.3)
    for _ in range(40):
        path = generate_path(geom, vd, delta_laser=0.7, max_order=30, rng=rng)
        assert path.order >= 1
        assert path.weight >= 0.0
        path.validate(geom)  # Doppler chain, |k_in| = k, containment


def test_generate_path_static_frequencies_constant(rng):
    geom = MediumGeometry.sphere(b=6.0)
    vd = VelocityDistribution.static()
    for _ in range(20):
        path = generate_path(geom, vd, delta_laser=1.5, max_order=40, rng=rng)
        assert np.all(path.segment_detunings == 1.5)


def test_generate_path_sphere_escapes(rng):
    geom = MediumGeometry.sphere(b=1.0)
    vd = VelocityDistribution.static()
    paths = [generate_path(geom, vd, 0.0, 50, rng) for _ in range(60)]
    assert any(p.escaped for p in paths)
    assert all(p.order >= 1 for p in paths)  # first collision is forced


def _two_event_record(geom, delta, v1, v2, z1=800.0, offset=(300.0, 0.0, 400.0)):
    p1 = np.array([0.0, 0.0, z1])
    p2 = p1 + np.asarray(offset, dtype=float)
    khat = (p2 - p1) / np.linalg.norm(p2 - p1)
    zhat = np.array([0.0, 0.0, 1.0])
    lab_mid = delta + float((khat - zhat) @ v1)
    return PhotonPathRecord(
        events=(
            ScatteringEvent(p1, np.asarray(v1, float), zhat, delta),
            ScatteringEvent(p2, np.asarray(v2, float), khat, lab_mid),
        ),
        entry_point=np.zeros(3),
        exit_direction=MINUS_Z,
        delta_laser=delta,
        weight=1.0,
        escaped=True,
    )


def test_two_event_amplitudes_match_hand_assembly(rng):
    # direct: w, w_d = w + (k'-k).v1, w' = w_d - (k+k').v2
    # reverse: w_r = w - (k'+k).v2, same outgoing w'
    geom = MediumGeometry.slab()
    vd = VelocityDistribution.gaussian(0.2)
    shape = _Lineshape(geom.rho, vd)
    delta = 0.4
    zhat = np.array([0.0, 0.0, 1.0])
    for _ in range(5):
        v1, v2 = rng.normal(0, 0.2, 3), rng.normal(0, 0.2, 3)
        rec = _two_event_record(geom, delta, v1, v2)
        p1, p2 = rec.events[0].position, rec.events[1].position
        khat = (p2 - p1) / np.linalg.norm(p2 - p1)
        r12 = np.linalg.norm(p2 - p1)
        z1, z2 = p1[2], p2[2]

        w_d = delta + (khat - zhat) @ v1
        w_out = w_d - (zhat + khat) @ v2
        hand_dir = (
            resonance_factor(delta - zhat @ v1)
            * resonance_factor(w_d - khat @ v2)
            * np.exp(1j * shape.kappa(w_d) * r12)
            * np.exp(-0.5 * z1 * shape.inv_ell(delta) - 0.5 * z2 * shape.inv_ell(w_out))
        )
        w_r = delta - (khat + zhat) @ v2
        hand_rev = (
            resonance_factor(delta - zhat @ v2)
            * resonance_factor(w_r + khat @ v1)
            * np.exp(1j * shape.kappa(w_r) * r12)
            * np.exp(-0.5 * z2 * shape.inv_ell(delta) - 0.5 * z1 * shape.inv_ell(w_out))
        )
        assert direct_amplitude(rec, geom, vd, MINUS_Z) == pytest.approx(hand_dir, rel=1e-12)
        assert reverse_amplitude(rec, geom, vd, MINUS_Z) == pytest.approx(hand_rev, rel=1e-12)


def test_static_amplitude_modulus_reversal_invariant(rng):
    geom = MediumGeometry.slab()
    vd = VelocityDistribution.static()
    for _ in range(10):
        path = generate_path(geom, vd, 0.3, 25, rng)
        a_d = direct_amplitude(path, geom, vd, MINUS_Z)
        a_r = reverse_amplitude(path, geom, vd, MINUS_Z)
        assert abs(a_d) == pytest.approx(abs(a_r), rel=1e-12)
        assert a_r == pytest.approx(a_d, rel=1e-12)  # full reciprocity at theta = 0


def test_outgoing_frequency_identity_termwise(rng):
    # per-atom Doppler increments of direct and reverse traversals are equal
    geom = MediumGeometry.slab()
    vd = VelocityDistribution.lorentz_like(v0=1.0)
    zhat = np.array([0.0, 0.0, 1.0])
    for _ in range(15):
        path = generate_path(geom, vd, 0.0, 12, rng)
        n = path.order
        k_dirs = [ev.k_in for ev in path.events] + [MINUS_Z]
        for j, ev in enumerate(path.events):
            eps_dir = (k_dirs[j + 1] - k_dirs[j]) @ ev.velocity
            k_in_rev = zhat if j == n - 1 else -k_dirs[j + 1]
            k_out_rev = MINUS_Z if j == 0 else -k_dirs[j]
            eps_rev = (k_out_rev - k_in_rev) @ ev.velocity
            assert eps_rev == pytest.approx(eps_dir, rel=1e-12, abs=1e-15)


# -- engine ------------------------------------------------------------------


def test_static_reciprocity_every_path():
    for geom in (MediumGeometry.slab(), MediumGeometry.sphere(b=8.0)):
        eng = TransportEngine(geom, VelocityDistribution.static(), delta=0.0,
                              max_order=40)
        est = quiet_run(eng, 3000, seed=9, collect_path_q=True)
        q = est.path_q[~np.isnan(est.path_q)]
        assert np.abs(q - 1.0).max() < 1e-12
        good = est.present
        assert np.allclose(est.contrast[good], 1.0, atol=1e-12)


def test_engine_matches_record_evaluation():
    geom = MediumGeometry.slab()
    vd = VelocityDistribution.gaussian(0.05)
    exact = TransportEngine(geom, vd, delta=0.0, max_order=25, tabulated=False)
    records = exact.sample_records(150, seed=42)
    h = exact._walk_batch(150, exact._rng(42, 0, 0))
    out = exact._eval_batch(h, collect_path_q=True)
    k = 0
    for i in range(150):
        if h["reached"][i] == 0:
            continue
        q_ref, _ = path_interference(records[k], geom, vd)
        assert abs(q_ref - out["path_q"][i]) < 1e-11
        k += 1

    tab = TransportEngine(geom, vd, delta=0.0, max_order=25, tabulated=True)
    h2 = tab._walk_batch(150, tab._rng(42, 0, 0))
    out2 = tab._eval_batch(h2, collect_path_q=True)
    k = 0
    for i in range(150):
        if h2["reached"][i] == 0:
            continue
        q_ref, _ = path_interference(records[k], geom, vd)
        assert abs(q_ref - out2["path_q"][i]) < 1e-6
        k += 1


def test_sphere_deep_orders_carry_weight():
    geom = MediumGeometry.sphere(b=13.0)
    eng = TransportEngine(geom, VelocityDistribution.static(), delta=0.0, max_order=80)
    est = quiet_run(eng, 20000, seed=1)
    w = est.weight
    assert w[10:].sum() / w.sum() > 0.1  # deep multiple scattering present


def test_contrast_monotone_in_order(rng):
    geom = MediumGeometry.slab()
    eng = TransportEngine(geom, VelocityDistribution.gaussian(0.05), delta=0.0,
                          max_order=20)
    est = quiet_run(eng, 60000, seed=77)
    c, se = est.contrast, est.stderr
    for i in (1, 3, 6, 10, 14):
        j = i + 4
        if est.present[i] and est.present[j]:
            assert c[j] <= c[i] + 4.0 * np.hypot(se[i], se[j])


def test_enhancement_static_limits():
    geom = MediumGeometry.sphere(b=8.0)
    eng = TransportEngine(geom, VelocityDistribution.static(), delta=0.0, max_order=100)
    est = quiet_run(eng, 30000, seed=3)
    # single scattering excluded from both sums: exactly 2
    multi = est.present.copy()
    multi[0] = False
    num = (est.contrast[multi] * est.weight[multi]).sum()
    den = est.weight[multi].sum()
    assert 1.0 + num / den == pytest.approx(2.0, abs=1e-12)
    # single scattering in the denominator only: strictly below 2
    assert 1.0 < est.enhancement < 2.0
    expected = 1.0 + est.weight[1:].sum() / est.weight.sum()
    assert est.enhancement == pytest.approx(expected, rel=1e-12)


def test_include_single_coherent_flag():
    geom = MediumGeometry.sphere(b=5.0)
    base = TransportEngine(geom, VelocityDistribution.static(), delta=0.0, max_order=80)
    est = quiet_run(base, 20000, seed=5)
    flagged = TransportEngine(geom, VelocityDistribution.static(), delta=0.0,
                              max_order=80, include_single_coherent=True)
    est2 = quiet_run(flagged, 20000, seed=5)
    assert est2.enhancement == pytest.approx(2.0, abs=1e-12)  # all q = 1, static
    assert est2.enhancement > est.enhancement


def test_insufficient_order_flagged_absent():
    geom = MediumGeometry.sphere(b=0.5)  # thin: high orders unpopulated
    eng = TransportEngine(geom, VelocityDistribution.static(), delta=0.0, max_order=60)
    est = quiet_run(eng, 1000, seed=2)
    assert not est.present.all()
    assert np.isnan(est.contrast[~est.present]).all()
    table_orders = [row[0] for row in est.order_table()]
    assert set(table_orders) == set(est.orders[est.present].tolist())


def test_photon_budget_guard():
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.static(), 0.0)
    with pytest.raises(ValueError):
        eng.run(999)


def test_truncation_warning_mechanics():
    slab = TransportEngine(MediumGeometry.slab(), VelocityDistribution.static(),
                           delta=0.0, max_order=10)
    with pytest.warns(TruncationWarning):
        slab.run(2000)
    thin = TransportEngine(MediumGeometry.sphere(b=1.0), VelocityDistribution.static(),
                           delta=0.0, max_order=60)
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        est = thin.run(2000, seed=8)
    assert est.truncation_fraction < 0.01


def test_frequency_walk_gaussian_dispersion():
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.gaussian(0.02),
                          delta=0.0, max_order=30)
    stats = eng.walk_stats(40000, orders=[4, 9, 25], seed=6)
    assert stats.statistic == "std"
    for n, disp in zip(stats.orders, stats.dispersion):
        expected = np.sqrt(2.0 * n) * 0.02
        assert abs(disp - expected) < 0.05 * expected


def test_frequency_walk_static_zero():
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.static(),
                          delta=0.0, max_order=30)
    stats = eng.walk_stats(2000, orders=[1, 5, 20], seed=6)
    assert np.all(stats.dispersion == 0.0)


def test_frequency_walk_lorentz_iqr_grows_linearly():
    vd = VelocityDistribution.lorentz_like(v0=0.1)
    eng = TransportEngine(MediumGeometry.slab(), vd, delta=0.0, max_order=40)
    stats = eng.walk_stats(150000, orders=[5, 10, 20, 40], seed=6)
    assert stats.statistic == "iqr"
    assert np.all(np.diff(stats.dispersion) > 0)
    # Cauchy scales add; mean chord |k_out - k_in| over isotropic pairs is 4/3
    ratio = stats.dispersion / (2.0 * (4.0 / 3.0) * stats.orders * vd.gamma_v)
    assert abs(ratio[-1] - 1.0) < 0.1


def test_worker_count_invariance():
    geom = MediumGeometry.sphere(b=4.0)
    eng = TransportEngine(geom, VelocityDistribution.gaussian(0.03), delta=0.0,
                          max_order=40)
    a = quiet_run(eng, 20000, seed=123, workers=1)
    b = quiet_run(eng, 20000, seed=123, workers=3)
    assert np.array_equal(a.contrast[a.present], b.contrast[b.present])
    assert a.enhancement == b.enhancement
    assert np.array_equal(a.weight, b.weight)


def test_static_with_linewidth_keeps_reciprocity():
    # per-photon laser jitter shifts the chain but not the q = 1 identity
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.static(),
                          delta=0.0, max_order=20, laser_linewidth=0.3)
    est = quiet_run(eng, 2000, seed=4, collect_path_q=True)
    q = est.path_q[~np.isnan(est.path_q)]
    assert np.abs(q - 1.0).max() < 1e-12


def test_laser_frequency_stepping_flag_runs():
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.gaussian(0.1),
                          delta=0.0, max_order=15, local_frequency_stepping=False)
    est = quiet_run(eng, 5000, seed=4)
    assert np.isfinite(est.enhancement)


def test_angular_profile_symmetry_and_peak():
    grid = np.linspace(-2.5e-3, 2.5e-3, 11)
    eng = TransportEngine(MediumGeometry.slab(), VelocityDistribution.static(),
                          delta=0.0, max_order=12, theta_grid=grid)
    est = quiet_run(eng, 150000, seed=10)
    prof, se = est.interference, est.interference_stderr
    mid = 5
    assert prof[mid] == pytest.approx(max(prof), abs=1e-12)  # peak at theta = 0
    for i in range(1, 5):
        tol = 4.0 * np.hypot(se[mid - i], se[mid + i])
        assert abs(prof[mid - i] - prof[mid + i]) < tol


def test_profile_half_width_helper():
    theta = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([1.0, 0.8, 0.4, 0.2])
    assert profile_half_width(theta, y) == pytest.approx(1.75)
    assert np.isnan(profile_half_width(theta, np.ones(4)))
