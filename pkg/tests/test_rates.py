import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsaclab.errors import NonPositiveError
from nsaclab.geometry import Interface
from nsaclab.rates import compare_interfaces, fit_rate

EPS = np.array([0.08, 0.04, 0.02, 0.01])


def test_exact_quadratic_data():
    rep = fit_rate(EPS, EPS**2, threshold=1.5)
    assert rep.order == pytest.approx(2.0, abs=1e-6)
    assert rep.r2 == pytest.approx(1.0)
    assert rep.residual <= 1e-12
    assert rep.passed is True


def test_power_with_prefactor():
    rep = fit_rate(EPS, 3 * EPS**1.5, threshold=1.8)
    assert rep.order == pytest.approx(1.5, abs=1e-12)
    assert rep.intercept == pytest.approx(np.log(3), abs=1e-12)
    assert rep.passed is False
    d = rep.as_dict()
    assert d["order"] == rep.order and len(d["errors"]) == 4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_noisy_quadratic_stays_in_band(noise):
    rep = fit_rate(EPS, EPS**2 * (1 + 0.01 * np.asarray(noise)))
    assert 1.9 <= rep.order <= 2.1


@pytest.mark.parametrize("bad", [0.0, -1e-3, np.nan, np.inf])
def test_nonpositive_errors_rejected(bad):
    errs = EPS**2
    errs[1] = bad
    with pytest.raises(NonPositiveError):
        fit_rate(EPS, errs)


def test_needs_three_points():
    with pytest.raises(ValueError):
        fit_rate(EPS[:2], EPS[:2] ** 2)
    with pytest.raises(ValueError):
        fit_rate(EPS, EPS[:3])


def test_identical_interfaces():
    a = Interface.ellipse(0.5, 0.3, 128)
    haus, l2 = compare_interfaces(a, a)
    assert haus <= 1e-12 and l2 <= 1e-12


def test_concentric_circles_offset():
    h = 0.01
    haus, l2 = compare_interfaces(Interface.circle(0.5 + h, 128), Interface.circle(0.5, 128))
    assert haus == pytest.approx(h, abs=1e-12)
    assert l2 == pytest.approx(h, abs=1e-12)


def test_resampling_does_not_change_distance():
    a = Interface.ellipse(0.5, 0.3, 96)
    b = Interface.ellipse(0.5, 0.3, 96).translated((0.004, 0.0))
    h1, _ = compare_interfaces(a, b)
    h2, _ = compare_interfaces(a.resample(200), b.resample(150))
    assert h1 == pytest.approx(h2, rel=1e-2)
    assert h1 == pytest.approx(0.004, rel=0.05)


def test_far_curves_fall_back_to_point_clouds():
    a = Interface.circle(0.5, 64)
    b = Interface.circle(0.5, 64, center=(3.0, 0.0))
    haus, _ = compare_interfaces(a, b)
    assert haus == pytest.approx(3.0, rel=1e-2)
