import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsaclab.errors import DegenerateCurve, InsufficientResolution, OutsideTube
from nsaclab.geometry import (Interface, InterfaceHistory, LayerFunction, StretchedCoords, TubularMap,
                              chain_rule_check, curvature, laplacian_sd_coeffs, project, signed_distance,
                              stretched_rho, surface_grad, surface_laplace, surface_material_deriv,
                              tangent_normal)
from nsaclab.height import HeightFunction


@pytest.fixture(scope="module")
def unit():
    itf = Interface.circle(1.0, 256)
    return itf, TubularMap(itf)


def test_circle_frame():
    R = 1.7
    itf = Interface.circle(R, 128)
    s = np.linspace(0, 1, 13)
    tau, n = tangent_normal(itf, s)
    a = 2 * np.pi * s
    assert np.allclose(tau, np.column_stack([-np.sin(a), np.cos(a)]), atol=1e-12)
    assert np.allclose(n, np.column_stack([-np.cos(a), -np.sin(a)]), atol=1e-12)


def test_line_and_ellipse_frame():
    line = Interface.line()
    tau, n = tangent_normal(line, np.array([0.3]))
    assert np.allclose(tau, [[1, 0]]) and np.allclose(n, [[0, 1]])
    assert np.allclose(curvature(line, np.array([0.1, 0.7])), 0.0)
    ell = Interface.ellipse(2.0, 1.0, 128)
    tau, n = tangent_normal(ell, np.array([0.0]))
    assert np.allclose(tau, [[0, 1]], atol=1e-12) and np.allclose(n, [[-1, 0]], atol=1e-12)


def test_curvature_sign_and_accuracy():
    R = 0.8
    ccw = Interface.circle(R, 256)
    cw = Interface.circle(R, 256, clockwise=True)
    s = np.linspace(0, 1, 37)
    assert np.max(np.abs(curvature(ccw, s) * R - 1)) <= 1e-6
    assert np.allclose(curvature(cw, s), -1 / R, rtol=1e-6)


def test_degenerate_curve_rejected():
    pts = np.zeros((16, 2))
    pts[:, 0] = np.cos(2 * np.pi * np.arange(16) / 16)
    with pytest.raises(DegenerateCurve):
        Interface(np.zeros((16, 2)) + 1.0)


def test_signed_distance_examples(unit):
    _, tub = unit
    d = signed_distance(tub, np.array([[0.5, 0.0], [1.0, 0.0], [1.3, 0.0]]))
    assert np.allclose(d, [0.5, 0.0, -0.3], atol=1e-12)


def test_projection_examples(unit):
    itf, tub = unit
    r, s = project(tub, np.array([[0.5, 0.0]]))
    assert r[0] == pytest.approx(0.5) and min(s[0], 1 - s[0]) < 1e-12
    s0 = 0.37
    x0 = itf.position(np.array([s0]))
    r, s = project(tub, 1.2 * x0)
    assert r[0] == pytest.approx(-0.2, abs=1e-12) and s[0] == pytest.approx(s0, abs=1e-12)


def test_outside_tube_saturates(unit):
    _, tub = unit
    d, flag = tub.signed_distance(np.array([[0.0, 0.0], [3.0, 0.0]]), return_flag=True)
    assert np.all(flag)
    assert np.allclose(np.abs(d), 3 * tub.delta)
    assert d[0] > 0 > d[1]
    with pytest.raises(OutsideTube):
        tub.project(np.array([[3.0, 0.0]]))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(-0.45, 0.45))
def test_projection_roundtrip(s0, frac):
    itf = Interface.ellipse(1.2, 0.8, 256)
    tub = TubularMap(itf)
    r0 = frac * 2 * tub.delta / 0.9
    x = tub.point(np.array([r0]), np.array([s0]))
    r, s = tub.project(x)
    ds = (s[0] - s0 + 0.5) % 1.0 - 0.5
    assert abs(r[0] - r0) <= 1e-8 and abs(ds) <= 1e-8


def test_gradient_distance_matches_normal(rng):
    itf = Interface.ellipse(1.0, 0.7, 256)
    tub = TubularMap(itf)
    s = rng.random(50)
    r = (rng.random(50) - 0.5) * 2 * tub.delta
    x = tub.point(r, s)
    h = 1e-5
    grad = np.stack([(tub.signed_distance(x + h * e) - tub.signed_distance(x - h * e)) / (2 * h)
                     for e in np.eye(2)], axis=-1)
    assert np.max(np.abs(grad - tub.gradient_distance(x))) < 1e-6


def test_laplacian_coeffs_circle():
    R = 2.0
    tub = TubularMap(Interface.circle(R, 256))
    c = laplacian_sd_coeffs(tub, np.array([0.2]), 3)
    assert c[0][0] == pytest.approx(1 / R, rel=1e-8)
    assert c[1][0] == pytest.approx(1 / R**2, rel=1e-4)
    d = 0.1
    partial = -0.5 - d * 0.25 - d**2 / 8
    assert abs(partial - (-1 / 1.9)) < 1e-3


def test_laplacian_coeffs_line_zero():
    tub = TubularMap(Interface.line(n=64), delta=0.05)
    c = laplacian_sd_coeffs(tub, np.array([0.3]), 2)
    assert np.max(np.abs(c)) < 1e-6


def test_laplacian_coeffs_partial_sum_order():
    R = 1.0
    tub = TubularMap(Interface.circle(R, 256))
    H = 1 / R
    d = np.array([0.02, 0.04, 0.08])
    exact = -1 / (R - d)
    for K in (1, 2, 3):
        c = tub.laplacian_sd_coeffs(np.zeros(1), K, method="metric")[:, 0]
        approx = -c[0] - (d * c[1] if K > 1 else 0) + sum(c[k] * d**k for k in range(2, K))
        slope = np.polyfit(np.log(d), np.log(np.abs(exact - approx)), 1)[0]
        assert abs(slope - K) < 0.3


def test_insufficient_resolution():
    tub = TubularMap(Interface.circle(1.0, 64), delta=0.01)
    with pytest.raises(InsufficientResolution):
        tub.laplacian_sd_coeffs(np.zeros(1), 8)


def test_surface_laplace_fourier_modes():
    R = 1.3
    n = 96
    itf = Interface.circle(R, n)
    s = itf.grid
    for k in range(1, 2 * n // 6):
        h = HeightFunction(np.sin(2 * np.pi * k * s)[None, :])
        lap = surface_laplace(itf, h, s)
        assert np.max(np.abs(lap + k**2 / R**2 * np.sin(2 * np.pi * k * s))) <= 1e-8 * max(1, k**2 / R**2)


def test_surface_ops_constant_and_static():
    itf = Interface.ellipse(1.0, 0.6, 64)
    s = np.linspace(0, 1, 9)
    assert np.allclose(surface_grad(itf, 2.0, s), 0)
    assert np.allclose(surface_laplace(itf, 2.0, s), 0)
    h = HeightFunction(np.array([np.sin(2 * np.pi * itf.grid), 2 * np.sin(2 * np.pi * itf.grid)]), np.array([0.0, 1.0]))
    assert np.allclose(surface_material_deriv(itf, h, s, t=0.5), np.sin(2 * np.pi * s))


def test_stretched_rho_examples(unit):
    _, tub = unit
    assert stretched_rho(StretchedCoords(0.1), tub, np.array([[0.95, 0.0]]))[0] == pytest.approx(0.5)
    assert stretched_rho(StretchedCoords(0.1, 1.0), tub, np.array([[1.0, 0.0]]))[0] == pytest.approx(-1.0)
    assert stretched_rho(StretchedCoords(0.1, 0.2), tub, np.array([[0.9, 0.0]]))[0] == pytest.approx(0.8)
    with pytest.raises(ValueError):
        StretchedCoords(0.0)


def test_chain_rule_linear(unit, rng):
    _, tub = unit
    w = LayerFunction.of_rho(lambda r: r, lambda r: np.ones_like(r), lambda r: np.zeros_like(r))
    s = rng.random(20)
    x = tub.point(0.1 * (rng.random(20) - 0.5), s)
    res = chain_rule_check(w, StretchedCoords(0.1, HeightFunction(0.1 * np.cos(2 * np.pi * np.arange(64) / 64)[None, :])), tub, x)
    assert max(res) < 1e-5


def test_chain_rule_theta0(unit, theta0, rng):
    _, tub = unit
    w = LayerFunction.of_rho(theta0, lambda r: theta0(r, 1), lambda r: theta0(r, 2))
    x = tub.point(0.05 * (rng.random(20) - 0.5), rng.random(20))
    res = chain_rule_check(w, StretchedCoords(0.1), tub, x, step=1e-3)
    assert res[2] * 0.1**2 < 1e-4
    assert res[1] < 1e-4


def test_chain_rule_moving_circle(rng):
    times = np.linspace(0.0, 0.1, 9)
    hist = InterfaceHistory.from_function(
        lambda s, t: np.sqrt(1 - 2 * t) * np.column_stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)]), times, 128)
    tub = TubularMap(hist.at(0.05))
    w = LayerFunction.of_rho(lambda r: r, lambda r: np.ones_like(r), lambda r: np.zeros_like(r))
    x = tub.point(0.05 * (rng.random(10) - 0.5), rng.random(10))
    res = chain_rule_check(w, StretchedCoords(0.2), tub, x, t=0.05, history=hist)
    assert res[0] < 1e-3
    assert hist.normal_velocity(np.array([0.2]), 0.05)[0] == pytest.approx(1 / np.sqrt(0.9), rel=1e-3)
