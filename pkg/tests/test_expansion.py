import numpy as np
import pytest

from nsaclab.errors import LayerUnresolved
from nsaclab.expansion import (build_cA0, build_cA_corrected, g0_field, h1_evolution, leading_velocity,
                               odd_moment, solve_c2, surface_parabolic_solve, u0_field)
from nsaclab.geometry import Interface, InterfaceHistory, StretchedCoords, TubularMap
from nsaclab.height import HeightFunction
from nsaclab.inner_ode import linearized_residual, LineRHS
from nsaclab.profile import Profile, eta_profile, profile_derivative_profile, surface_tension


@pytest.fixture(scope="module")
def circle():
    itf = Interface.circle(1.0, 256)
    return itf, TubularMap(itf)


def test_leading_velocity_limits(circle):
    _, tub = circle
    eta = eta_profile(np.linspace(-20, 20, 4001))
    x = np.array([[0.9, 0.0], [1.1, 0.0]])
    vp, vm = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    far = leading_velocity(vp, vm, eta, StretchedCoords(0.1), tub, x, rho=np.array([40.0, 40.0]))
    assert np.allclose(far, vp)
    same = leading_velocity(vp, vp, eta, StretchedCoords(0.1), tub, x)
    assert np.allclose(same, vp)
    on = leading_velocity(vp, vp, eta, StretchedCoords(0.1), tub, np.array([[1.0, 0.0]] * 3),
                          rho=np.array([-2.0, 0.0, 2.0]))
    assert np.allclose(on, vp)


def test_g0_circle(circle):
    itf, tub = circle
    g0 = g0_field(tub, None, 1.0)
    s = np.linspace(0, 1, 11, endpoint=False)
    assert np.max(np.abs(g0.on_gamma(s) + 1.0)) <= 1e-4
    x = np.array([[0.9, 0.0], [1.1, 0.0]])
    assert np.allclose(g0.off_gamma(x), [-1 / 0.9, -1 / 1.1], rtol=1e-3)
    assert g0(np.array([[0.9, 0.0]]))[0] == pytest.approx(-1.0 / 0.9, rel=1e-6)


def test_g0_branch_agreement(circle):
    _, tub = circle
    g0 = g0_field(tub, None, 1.0)
    s = np.array([0.1, 0.6])
    on = g0.on_gamma(s)
    for r in (1e-3, -1e-3):
        off = g0.off_gamma(tub.point(np.full(2, r), s))
        assert np.max(np.abs(off - on)) <= 1e-2


def test_g0_translating_line():
    tub = TubularMap(Interface.line(n=64), delta=0.1)
    U = np.array([0.3, 0.7])
    g0 = g0_field(tub, U, float(U[1]))
    x = np.array([[0.2, 0.05], [0.7, -0.03]])
    assert np.max(np.abs(g0.off_gamma(x))) < 1e-12


def test_u0_fields(circle):
    _, tub = circle
    v = np.array([0.4, -1.0])
    u = u0_field(v, v, tub)
    x = np.array([[0.9, 0.1], [1.05, -0.2]])
    assert np.max(np.abs(u(x))) < 1e-14

    def W(x):
        return np.stack([x[..., 0], np.ones(x.shape[:-1])], axis=-1)

    def vplus(x):
        return tub.signed_distance(x)[..., None] * W(x)

    u = u0_field(vplus, np.zeros(2), tub)
    pts = tub.point(np.array([0.1, -0.05, 0.0]), np.array([0.2, 0.5, 0.8]))
    assert np.max(np.abs(u(pts) - W(pts))) < 1e-6


def test_build_cA0_values(theta0):
    tub = TubularMap(Interface.circle(1.0, 256), delta=0.2)
    cA = build_cA0(0.05, tub, theta0)
    x = np.array([[1.0, 0.0], [0.9, 0.0], [1.6, 0.0], [0.0, 0.0]])
    v = cA(x)
    assert v[0] == pytest.approx(0.0, abs=1e-12)
    assert v[1] == pytest.approx(np.tanh(1.0), abs=1e-9)
    assert v[2] == -1.0 and v[3] == 1.0
    with pytest.raises(LayerUnresolved):
        build_cA0(0.5, tub, theta0)


def test_corrected_solution(theta0):
    tub = TubularMap(Interface.circle(1.0, 256), delta=0.2)
    base = build_cA0(0.1, tub, theta0)
    zero_c2 = theta0.with_values(np.zeros_like(theta0.rho), np.zeros_like(theta0.rho), limit_minus=0.0, limit_plus=0.0)
    same = build_cA_corrected(base, zero_c2, HeightFunction.constant(0.0), 3)
    x = np.array([[0.95, 0.05], [1.02, 0.0]])
    assert np.array_equal(same(x), base(x))
    corr = build_cA_corrected(base, zero_c2, HeightFunction.constant(1.0), 3)
    on = np.array([[1.0, 0.0]])
    assert corr(on)[0] - base(on)[0] == pytest.approx(0.1**2.5 * 0.5, rel=1e-9)


def test_correction_projection(theta0):
    # int correction * theta0' drho = eps^(N-1/2) sigma h + O(eps^(N+3/2))
    eps, N, hval = 0.05, 3, 0.7
    p = theta0
    d1 = profile_derivative_profile(p, 1)
    c2 = solve_c2(p, 1.0, 1.0)
    corr = (eps ** (N - 0.5) * d1.values + eps ** (N + 1.5) * c2(p.rho, np.zeros_like(p.rho), 1)) * hval
    proj = np.trapezoid(corr * d1.values, p.rho)
    lead = eps ** (N - 0.5) * surface_tension(p) * hval
    assert abs(proj - lead) <= 10 * eps ** (N + 1.5)


def test_c2_properties(theta0):
    c2 = solve_c2(theta0, 0.5, -2.0)
    fib = c2.fiber(0)
    assert fib(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)
    th1 = profile_derivative_profile(theta0, 1)
    th2 = profile_derivative_profile(theta0, 2)
    # c2'' - f'' c2 = -(0.5 theta0'' + 2 rho theta0')
    rhs = LineRHS.sampled(theta0, -(0.5 * th2.values + 2.0 * theta0.rho * th1.values), (0.0, 0.0))
    res = linearized_residual(fib, rhs, theta0)
    assert abs(np.trapezoid(res[10:-10] * th1.values[10:-10], theta0.rho[10:-10])) < 1e-8


def test_heat_mode_decay():
    R, k = 1.0, 3
    itf = Interface.circle(R, 64)
    s = itf.grid
    h = surface_parabolic_solve(itf, np.sin(2 * np.pi * k * s), 0.1, 1e-4, save_every=1000)
    exact = np.exp(-k**2 * 0.1 / R**2) * np.sin(2 * np.pi * k * s)
    assert np.max(np.abs(h.slice() - exact)) <= 1e-6


def test_zero_data_stays_zero():
    itf = Interface.ellipse(1.0, 0.7, 32)
    h = surface_parabolic_solve(itf, np.zeros(32), 0.05, 1e-3)
    assert np.all(h.values == 0)


def test_reaction_mode_by_mode():
    R, abar = 1.5, 0.8
    itf = Interface.circle(R, 48)
    s = itf.grid
    h0 = 1.0 + 0.5 * np.cos(2 * np.pi * s) - 0.2 * np.sin(2 * np.pi * 4 * s)
    t = 0.2
    h = surface_parabolic_solve(itf, h0, t, 1e-4, a=abar, save_every=10000).slice()
    exact = np.exp(-abar * t) * (1.0 + 0.5 * np.exp(-t / R**2) * np.cos(2 * np.pi * s)
                                 - 0.2 * np.exp(-16 * t / R**2) * np.sin(2 * np.pi * 4 * s))
    assert np.max(np.abs(h - exact)) < 1e-6


def test_mass_consistency():
    itf = Interface.ellipse(1.0, 0.6, 64)
    s = itf.grid
    sp = np.linalg.norm(itf.nodal_derivative(1), axis=1)
    g = lambda ss, t: np.cos(2 * np.pi * ss) + 0.3
    dt, t_end = 1e-3, 0.05
    h = surface_parabolic_solve(itf, np.sin(2 * np.pi * s), t_end, dt, g=g)
    mass = np.array([np.mean(v * sp) for v in h.values])
    rate = np.mean(g(s, 0) * sp)
    assert np.max(np.abs(np.diff(mass) / np.diff(h.times) - rate)) < 1e-10


def test_odd_moment_vanishes(theta0):
    assert abs(odd_moment(theta0)) <= 1e-12


def test_h1_zero_for_circle_mcf(theta0):
    times = np.linspace(0.0, 0.1, 11)
    hist = InterfaceHistory.from_function(
        lambda s, t: np.sqrt(1 - 2 * t) * np.column_stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)]), times, 32)
    h1 = h1_evolution(hist, 0.1, 1e-3, theta0, g0=lambda s, t: -np.full(s.shape, 1.0 / (1 - 2 * t)))
    assert np.max(np.abs(h1.values)) <= 1e-12
    assert np.all(h1.values[0] == 0)


def test_h1_constant_forcing(theta0):
    beta = 0.3
    itf = Interface.circle(1.0, 32)
    h1 = h1_evolution(itf, 0.2, 1e-3, theta0, v1_normal=beta, save_every=50)
    for t, v in zip(h1.times, h1.values):
        assert np.allclose(v, -beta * t, atol=1e-10)
