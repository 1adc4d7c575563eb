import numpy as np
import pytest
from scipy.integrate import quad

from cbsmc import optics
from cbsmc.optics import (
    SIGMA0,
    DiluteMediumWarning,
    cross_section,
    dephasing_estimate,
    effective_index,
    index_shift,
    mean_cross_section,
    mean_free_path,
    mean_polarizability,
    polarizability,
    resonance_factor,
    scattering_phase_slope,
)
from cbsmc.velocity import VelocityDistribution


def test_resonance_factor_on_resonance():
    assert resonance_factor(0.0) == pytest.approx(1.0 + 0.0j, abs=0)


def test_resonance_factor_half_width_point():
    # |R|^2 = 1/2 at delta = Gamma/2; value (1+i)/2
    r = resonance_factor(0.5)
    assert r == pytest.approx(0.5 + 0.5j, abs=1e-15)
    assert abs(r) ** 2 == pytest.approx(0.5, rel=1e-14)


def test_resonance_factor_far_detuned_monotone_decay():
    deltas = np.array([1.0, 3.0, 10.0, 100.0, 1e4])
    mags = np.abs(resonance_factor(deltas))
    assert np.all(np.diff(mags) < 0)
    assert mags[-1] < 1e-4
    assert np.all(np.abs(resonance_factor(np.linspace(-50, 50, 999))) <= 1.0)


def test_resonance_lineshape_matches_cross_section():
    # |R|^2 and sigma/sigma0 are the same Lorentzian, pointwise
    d = np.linspace(-20, 20, 4001)
    assert np.allclose(np.abs(resonance_factor(d)) ** 2,
                       cross_section(d) / SIGMA0, rtol=1e-14, atol=0)


def test_optical_theorem_random_detunings(rng):
    d = rng.uniform(-20, 20, 100)
    sigma = optics.WAVENUMBER * np.imag(polarizability(d))
    assert np.allclose(sigma, cross_section(d), rtol=1e-12, atol=0)


def test_phase_slope_finite_difference():
    # |d arg R / d w| at resonance is 2/Gamma (sign fixed by Im alpha > 0)
    h = 1e-6
    fd = (np.angle(resonance_factor(h)) - np.angle(resonance_factor(-h))) / (2 * h)
    assert abs(abs(fd) - 2.0) < 2e-6
    assert scattering_phase_slope(0.0) == pytest.approx(2.0, rel=1e-14)
    assert fd == pytest.approx(scattering_phase_slope(0.0), rel=1e-6)


def test_polarizability_values():
    assert polarizability(0.0) == pytest.approx(6j * np.pi, rel=1e-14)
    assert abs(polarizability(1e6)) < 1e-5
    for d in (0.0, 1.0, -1.0, 10.0, -10.0):
        assert polarizability(d) * (d + 0.5j) == pytest.approx(-3 * np.pi, rel=1e-14)
    # alpha = (6 pi / k^3) i R
    d = np.linspace(-5, 5, 101)
    assert np.allclose(polarizability(d), 6 * np.pi * 1j * resonance_factor(d),
                       rtol=1e-14)


def test_cross_section_values():
    assert cross_section(0.0) == pytest.approx(6 * np.pi, rel=1e-14)
    assert cross_section(0.5) == pytest.approx(0.5 * SIGMA0, rel=1e-14)
    assert cross_section(1e5) < 1e-8


def test_mean_free_path_static_reciprocal():
    rho = 0.01 / SIGMA0  # rho sigma0 = 0.01 k
    assert mean_free_path(rho, 0.0, VelocityDistribution.static()) == pytest.approx(100.0)


def test_mean_free_path_requires_positive_density():
    with pytest.raises(ValueError):
        mean_free_path(0.0, 0.0, VelocityDistribution.static())
    with pytest.raises(ValueError):
        mean_free_path(-1.0, 0.0, VelocityDistribution.static())


def test_gaussian_slow_limit_matches_static():
    vd = VelocityDistribution.gaussian(0.01)
    rho = 1.0 / (SIGMA0 * 1000.0)
    ell = mean_free_path(rho, 0.0, vd)
    ell0 = mean_free_path(rho, 0.0, VelocityDistribution.static())
    assert abs(ell / ell0 - 1.0) < 1e-3


def test_lorentz_convolution_closed_form_vs_quadrature():
    # Lorentzian (x) Lorentzian with summed widths, checked to 1e-8
    for v0, d in [(0.2, 0.0), (0.2, 1.3), (1.0, -2.0), (3.0, 7.0)]:
        vd = VelocityDistribution.lorentz_like(v0=v0)
        gv = vd.gamma_v
        closed = mean_cross_section(d, vd)

        def integrand(u):
            return cross_section(d - u) * gv / (np.pi * (u * u + gv * gv))

        num = quad(integrand, -np.inf, np.inf, epsrel=1e-11, epsabs=0.0)[0]
        assert closed == pytest.approx(num, rel=1e-8)
        half = 0.5 + gv  # half widths add
        assert mean_cross_section(half, vd) == pytest.approx(
            0.5 * mean_cross_section(0.0, vd), rel=1e-12
        )


@pytest.mark.parametrize("kv", [1e-3, 0.05, 0.25])
def test_gauss_hermite_matches_voigt_below_limit(kv):
    vd = VelocityDistribution.gaussian(kv)
    d = np.linspace(-60, 60, 241)
    gh = mean_polarizability(d, vd, method="gh")
    vo = mean_polarizability(d, vd, method="voigt")
    assert np.max(np.abs(gh - vo) / np.abs(vo)) < 1e-8


@pytest.mark.parametrize("kv", [0.3, 1.0, 5.0])
def test_voigt_matches_adaptive_quadrature(kv):
    vd = VelocityDistribution.gaussian(kv)
    for d in (-30.0, -2.0, 0.0, 0.7, 12.0, 55.0):
        vo = mean_polarizability(d, vd, method="voigt")
        qd = mean_polarizability(d, vd, method="quad")
        assert abs(vo - qd) / abs(qd) < 1e-8


def test_effective_index_static_values():
    rho = 1e-4
    n0 = effective_index(rho, 0.0, VelocityDistribution.static())
    assert n0 == pytest.approx(1.0 + 1j * rho * 3 * np.pi, rel=1e-14)
    n_blue = effective_index(rho, 0.5, VelocityDistribution.static())
    assert np.real(n_blue - 1.0) < 0.0  # anomalous side
    assert np.imag(n_blue) > 0.0


def test_effective_index_lorentz_closed_form():
    vd = VelocityDistribution.lorentz_like(v0=0.6)
    rho = 1e-4
    half = 0.5 + vd.gamma_v
    for d in (0.0, 1.0, -4.0):
        expected = 1.0 + 0.5 * rho * (-3 * np.pi / (d + 1j * half))
        assert effective_index(rho, d, vd) == pytest.approx(expected, rel=1e-12)


def test_index_and_mean_free_path_consistency():
    # k rho Im<alpha> = 1/ell for every velocity model
    rho = 1.0 / (SIGMA0 * 500.0)
    for vd in (VelocityDistribution.static(), VelocityDistribution.gaussian(0.07),
               VelocityDistribution.lorentz_like(v0=0.4)):
        for d in (0.0, 0.8, -3.0, 20.0):
            lhs = rho * np.imag(mean_polarizability(d, vd))
            assert lhs == pytest.approx(1.0 / mean_free_path(rho, d, vd), rel=1e-10)
            assert 2.0 * np.imag(index_shift(rho, d, vd)) == pytest.approx(
                1.0 / mean_free_path(rho, d, vd), rel=1e-10
            )


def test_dilute_warning_channel():
    with pytest.warns(DiluteMediumWarning):
        effective_index(0.5, 0.0, VelocityDistribution.static())


def test_dephasing_estimate_zero_velocity():
    assert dephasing_estimate(0.0, 0.0, 100.0) == 0.0


def test_dephasing_estimate_on_resonance_scale():
    # bracket is the transport time ~ 1/Gamma, so result ~ kv
    kv = 0.1
    val = dephasing_estimate(0.0, kv, 1000.0)
    assert 0.5 * kv <= abs(val) <= 2.0 * kv


def test_dephasing_estimate_off_resonance_propagation_dominated():
    kv, d = 0.1, 5.0
    vd = VelocityDistribution.gaussian(kv)
    rho = 1.0 / (mean_cross_section(d, vd) * 1000.0)
    ell = mean_free_path(rho, d, vd)
    # independent finite difference of the effective index
    h = 1e-4 * d
    dn = (effective_index(rho, d + h, vd) - effective_index(rho, d - h, vd)) / (2 * h)
    prop = ell * np.real(dn)
    scat = scattering_phase_slope(d)
    assert abs(prop) > 10.0 * abs(scat)
    assert dephasing_estimate(d, kv, ell) == pytest.approx((scat + prop) * kv, rel=1e-9)


def test_transport_time_bracket_is_flat_in_detuning():
    # scattering and propagation slopes compensate: bracket = 1/Gamma exactly
    # for static scatterers at any detuning
    vd = VelocityDistribution.static()
    for d in (0.0, 0.5, 2.0, 5.0, 20.0):
        rho = 1e-5
        ell = mean_free_path(rho, d, vd)
        h = 1e-5 * max(1.0, d)
        dn = (effective_index(rho, d + h, vd) - effective_index(rho, d - h, vd)) / (2 * h)
        bracket = scattering_phase_slope(d) + ell * np.real(dn)
        assert bracket == pytest.approx(1.0, rel=1e-6)
