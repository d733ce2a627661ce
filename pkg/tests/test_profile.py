import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsaclab.profile import (Cutoff, DoubleWell, Profile, cutoff_zeta, equipartition_residual, eta_profile,
                             expansion_constants, optimal_profile, profile_derivative_profile,
                             profile_residual, surface_tension, surface_tension_equipartition)


def test_standard_well_values():
    w = DoubleWell.standard().check()
    for c in (-1.0, 1.0):
        assert w.f(c) == 0 and w.df(c) == 0
        assert w.d2f(c) == 1.0
    assert w.d2f(0.0) == -0.5


def test_degenerate_well_rejected():
    flat = DoubleWell(lambda c: (c * c - 1) ** 4, lambda c: 8 * c * (c * c - 1) ** 3,
                      lambda c: 0 * c, lambda c: 0 * c)
    with pytest.raises(ValueError):
        flat.check()


def test_theta0_matches_tanh(theta0):
    assert np.max(np.abs(theta0.values - np.tanh(theta0.rho / 2))) <= 1e-8
    assert theta0(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-15)


def test_theta0_monotone_and_odd(theta0):
    assert np.all(theta0.derivs > 0)
    assert np.max(np.abs(theta0.values + theta0.values[::-1])) <= 1e-12


def test_decay_rate_fit(theta0):
    r = theta0.rho
    sel = (r > 8) & (r < 20)
    slope = np.polyfit(r[sel], np.log(1 - theta0.values[sel]), 1)[0]
    assert -slope == pytest.approx(1.0, rel=0.02)


def test_equipartition_and_residual(theta0):
    assert equipartition_residual(theta0) <= 1e-8
    assert profile_residual(theta0) <= 1e-6


def test_surface_tension_oracle(theta0):
    # int sech^4 u du = 4/3, so int (1/4) sech^4(rho/2) drho = 2/3
    assert abs(surface_tension(theta0) - 2.0 / 3.0) <= 1e-10
    assert abs(surface_tension(theta0) - surface_tension_equipartition(theta0)) <= 1e-8


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_surface_tension_scales(lam):
    rho = np.linspace(-60, 60, 24001)
    p = Profile(rho, np.tanh(lam * rho / 2), lam / (2 * np.cosh(lam * rho / 2) ** 2), -1.0, 1.0, lam)
    assert surface_tension(p) == pytest.approx(lam * 2 / 3, rel=1e-9)


def test_surface_tension_of_constant_is_zero():
    rho = np.linspace(-10, 10, 301)
    p = Profile(rho, np.ones_like(rho), np.zeros_like(rho))
    assert surface_tension(p) == 0.0


def test_refinement_consistency(theta0):
    fine = optimal_profile(n=16001)
    r = np.linspace(-15, 15, 997)
    assert np.max(np.abs(fine(r) - theta0(r))) < 1e-9


def test_tail_evaluation_never_polynomial(theta0):
    r = np.array([45.0, 80.0, -80.0])
    far = theta0(r)
    assert np.all(np.abs(far) <= 1.0)
    slope = theta0(r, 1)
    assert np.all(slope > 0)
    assert slope[0] == pytest.approx(0.5 / np.cosh(22.5) ** 2, rel=1e-6)
    assert slope[1] < slope[0]


def test_expansion_constants(theta0):
    eta = eta_profile(theta0.rho)
    c = expansion_constants(theta0, eta, lambda x: 3.0)
    assert c.sigma_eta == pytest.approx(3.0, rel=1e-9)
    assert c.sigma0 == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert c.sigma2 == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_eta_compact_support():
    r = np.array([-3.0, -1.0, 1.0, 3.0])
    assert np.allclose(eta_profile(r, "compact").values, [0, 0, 1, 1])
    with pytest.raises(ValueError):
        eta_profile(r, "bogus")


def test_cutoff_properties():
    z = cutoff_zeta(0.2)
    assert isinstance(z, Cutoff)
    assert z(np.array(0.0)) == 1.0
    assert np.allclose(z(np.array([0.4, -0.4])), 0.0)
    mid = z(np.array(0.3))
    assert 0 < mid < 1
    zz = np.linspace(-0.5, 0.5, 2001)
    g = -zz * z.derivative(zz)
    assert g.min() >= -1e-14 and g.max() <= 4
    with pytest.raises(ValueError):
        cutoff_zeta(0.0)


def test_derivative_profiles(theta0):
    d1 = profile_derivative_profile(theta0, 1)
    d2 = profile_derivative_profile(theta0, 2)
    r = theta0.rho
    assert np.max(np.abs(d1.values - 0.25 / np.cosh(r / 2) ** 2 * 2)) < 1e-10
    exact2 = -0.5 * np.tanh(r / 2) / np.cosh(r / 2) ** 2
    assert np.max(np.abs(d2.values - exact2)) < 1e-10


def test_csv_roundtrip(tmp_path, theta0):
    path = tmp_path / "p.csv"
    theta0.to_csv(path)
    back = Profile.from_csv(path)
    assert np.array_equal(back.values, theta0.values)


@settings(max_examples=30, deadline=None)
@given(st.floats(-30, 30))
def test_hermite_evaluation_close_to_tanh(theta0, r):
    assert abs(theta0(np.array([r]))[0] - np.tanh(r / 2)) < 1e-9
