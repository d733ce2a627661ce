"""Double-well potential, optimal profile and the scalar layer constants.

The optimal profile is the heteroclinic orbit of ``-theta'' + f'(theta) = 0``
joining -1 to +1 with ``theta(0) = 0``.  It is tabulated on a uniform grid
of the stretched variable and evaluated between nodes by Hermite
interpolation; beyond the grid the fitted exponential tail is used.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from ._numerics import fd_derivative, trapezoid_uniform
from .errors import NonconvergentBVP


@dataclass(frozen=True)
class DoubleWell:
    """Potential ``f`` with derivatives up to third order."""

    f: Callable
    df: Callable
    d2f: Callable
    d3f: Callable
    name: str = "custom"

    @classmethod
    def standard(cls):
        """The quartic well f(c) = (c^2 - 1)^2 / 8."""
        return cls(
            f=lambda c: 0.125 * (c * c - 1.0) ** 2,
            df=lambda c: 0.5 * c * (c * c - 1.0),
            d2f=lambda c: 1.5 * c * c - 0.5,
            d3f=lambda c: 3.0 * c,
            name="quartic",
        )

    def check(self, tol=1e-12):
        """Verify the nondegenerate-well conditions at +-1."""
        for w in (-1.0, 1.0):
            if abs(self.f(w)) > tol or abs(self.df(w)) > tol:
                raise ValueError(f"f or f' does not vanish at {w}")
            if not self.d2f(w) > 0:
                raise ValueError(f"degenerate well at {w}")
        c = np.linspace(-1.0, 1.0, 2001)[1:-1]
        if np.any(self.f(c) <= 0):
            raise ValueError("f must be positive strictly between the wells")
        return self


@dataclass(frozen=True)
class Profile:
    """Tabulated function of the stretched variable on a uniform grid.

    ``derivs`` (optional) enables Hermite interpolation; without it a cubic
    spline is used.  Outside ``[rho[0], rho[-1]]`` values relax to the far
    limits at rate ``decay_rate``.
    """

    rho: np.ndarray
    values: np.ndarray
    derivs: Optional[np.ndarray] = None
    limit_minus: float = float("nan")
    limit_plus: float = float("nan")
    decay_rate: float = 1.0
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if rho.ndim != 1 or vals.shape != rho.shape:
            raise ValueError("rho and values must be 1D arrays of equal length")
        dr = np.diff(rho)
        if not np.allclose(dr, dr[0], rtol=1e-9, atol=0):
            raise ValueError("profile grid must be uniform")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "values", vals)
        if self.derivs is not None:
            object.__setattr__(self, "derivs", np.asarray(self.derivs, dtype=float))
        if np.isnan(self.limit_minus):
            object.__setattr__(self, "limit_minus", float(vals[0]))
        if np.isnan(self.limit_plus):
            object.__setattr__(self, "limit_plus", float(vals[-1]))

    @property
    def h(self):
        return float(self.rho[1] - self.rho[0])

    @property
    def L(self):
        return float(self.rho[-1])

    @cached_property
    def _spline(self):
        if self.derivs is not None:
            return CubicHermiteSpline(self.rho, self.values, self.derivs)
        return CubicSpline(self.rho, self.values)

    @cached_property
    def _end_derivs(self):
        if self.derivs is not None:
            return float(self.derivs[0]), float(self.derivs[-1])
        d = self._spline(self.rho[[0, -1]], 1)
        return float(d[0]), float(d[1])

    def __call__(self, r, nu=0):
        """Evaluate the profile (``nu``-th derivative, nu <= 2) at ``r``."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo, hi = self.rho[0], self.rho[-1]
        inside = (r >= lo) & (r <= hi)
        out[inside] = self._spline(r[inside], nu)
        a = self.decay_rate
        for mask, edge, limit, sgn in (
            (r > hi, hi, self.limit_plus, 1.0),
            (r < lo, lo, self.limit_minus, -1.0),
        ):
            if not np.any(mask):
                continue
            amp = (self.values[-1] if sgn > 0 else self.values[0]) - limit
            if amp == 0.0 and self.derivs is not None and np.isfinite(a) and a > 0:
                # edge value rounded onto the limit; the slope still carries the tail
                amp = -sgn * (self.derivs[-1] if sgn > 0 else self.derivs[0]) / a
            decay = np.exp(-a * np.abs(r[mask] - edge))
            if nu == 0:
                out[mask] = limit + amp * decay
            else:
                out[mask] = amp * (-sgn * a) ** nu * decay
        return out

    def derivative(self, r, nu=1):
        return self(r, nu)

    def with_values(self, values, derivs=None, name=None, **kw):
        """A profile on the same grid with new samples."""
        return Profile(self.rho, values, derivs, name=name or self.name, **kw)

    def tail_deviation(self):
        """Max deviation from the far limits over the outer third of each half."""
        L = self.L
        right = self.rho >= 2.0 * L / 3.0
        left = self.rho <= -2.0 * L / 3.0
        return (
            float(np.max(np.abs(self.values[left] - self.limit_minus))),
            float(np.max(np.abs(self.values[right] - self.limit_plus))),
        )

    def to_csv(self, path):
        d = self.derivs if self.derivs is not None else self._spline(self.rho, 1)
        np.savetxt(
            path,
            np.column_stack([self.rho, self.values, d]),
            delimiter=",",
            header="rho,value,derivative",
            comments="",
            fmt="%.17g",
        )

    @classmethod
    def from_csv(cls, path, **kw):
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(data[:, 0], data[:, 1], data[:, 2], **kw)


def uniform_grid(L, n):
    if n < 3:
        raise ValueError("need at least 3 nodes")
    return np.linspace(-L, L, n)


def optimal_profile(well=None, L=40.0, n=8001, rtol=1e-13):
    """Tabulate the optimal profile for ``well`` on ``[-L, L]``.

    The first integral ``theta' = sqrt(2 f(theta))`` is integrated outward
    from ``theta(0) = 0`` with an 8th-order Runge-Kutta method, written for
    the distance to the nearer well so the tails keep full relative
    precision; second derivatives follow from the profile equation itself.
    """
    well = (well or DoubleWell.standard()).check()
    alpha_p = float(np.sqrt(well.d2f(1.0)))
    alpha_m = float(np.sqrt(well.d2f(-1.0)))
    if L < 20.0 / max(alpha_p, alpha_m) - 1e-12:
        raise ValueError("truncation L too short for the well's decay rate")
    if n < 256:
        raise ValueError("need n >= 256 profile nodes")
    rho = uniform_grid(L, n)

    def two_f(w, well_at):
        # 2 f(well_at - sgn w) for the distance w to the well; Taylor near the
        # well keeps the derivative positive once theta rounds to +-1
        sgn = np.sign(well_at)
        if w > 1e-6:
            return max(2.0 * well.f(well_at - sgn * w), 0.0)
        return well.d2f(well_at) * w * w - sgn * well.d3f(well_at) * w**3 / 3.0

    def rhs(_, y, well_at):
        return [-np.sqrt(max(two_f(y[0], well_at), 0.0))]

    def df(w, well_at):
        sgn = np.sign(well_at)
        if w > 1e-6:
            return well.df(well_at - sgn * w)
        return -sgn * well.d2f(well_at) * w + 0.5 * well.d3f(well_at) * w * w

    theta = np.empty(n)
    d1 = np.empty(n)
    d2 = np.empty(n)
    for well_at, mask in ((1.0, rho >= 0), (-1.0, rho < 0)):
        pts = np.abs(rho[mask])
        order = np.argsort(pts)
        sol = solve_ivp(
            rhs, (0.0, L), [1.0], method="DOP853", t_eval=pts[order],
            args=(well_at,), rtol=rtol, atol=1e-300,
        )
        if not sol.success:
            raise NonconvergentBVP(f"profile integration failed: {sol.message}")
        w = np.empty(pts.size)
        w[order] = sol.y[0]
        theta[mask] = well_at - well_at * w
        d1[mask] = [np.sqrt(max(two_f(wi, well_at), 0.0)) for wi in w]
        d2[mask] = [df(wi, well_at) for wi in w]
    theta = np.clip(theta, -1.0, 1.0)
    alpha = min(alpha_p, alpha_m)
    if max(1.0 - theta[-1], theta[0] + 1.0) > 2.0 * np.exp(-alpha * L) + 1e-14:
        raise NonconvergentBVP("profile did not reach the wells at the truncation")
    p = Profile(
        rho, theta, d1, limit_minus=-1.0, limit_plus=1.0, decay_rate=alpha,
        name="theta0", meta={"second": d2, "well": well},
    )
    return p


def profile_residual(p, well=None, accuracy=8):
    """Sup-norm of ``-theta'' + f'(theta)`` using finite differences of the table."""
    well = well or p.meta.get("well") or DoubleWell.standard()
    d2 = fd_derivative(p.values, p.h, deriv=2, accuracy=accuracy)
    return float(np.max(np.abs(-d2 + well.df(p.values))))


def equipartition_residual(p, well=None):
    well = well or p.meta.get("well") or DoubleWell.standard()
    d1 = p.derivs if p.derivs is not None else fd_derivative(p.values, p.h)
    return float(np.max(np.abs(0.5 * d1**2 - well.f(p.values))))


def profile_derivative_profile(p, order=1):
    """The ``order``-th derivative of a profile, itself as a Profile."""
    if order == 1:
        vals = p.derivs if p.derivs is not None else fd_derivative(p.values, p.h)
        second = p.meta.get("second")
        if second is None:
            second = fd_derivative(p.values, p.h, deriv=2)
        return Profile(p.rho, vals, second, limit_minus=0.0, limit_plus=0.0,
                       decay_rate=p.decay_rate, name=f"{p.name}'")
    if order == 2:
        second = p.meta.get("second")
        if second is None:
            second = fd_derivative(p.values, p.h, deriv=2)
        return Profile(p.rho, second, fd_derivative(second, p.h), limit_minus=0.0,
                       limit_plus=0.0, decay_rate=p.decay_rate, name=f"{p.name}''")
    raise ValueError("order must be 1 or 2")


def _tail_integral(end_value, rate):
    return end_value / (2.0 * rate) if rate > 0 else 0.0


def surface_tension(p):
    """sigma = integral of theta0'^2 over the line, with exponential tail."""
    d1 = p.derivs if p.derivs is not None else fd_derivative(p.values, p.h)
    core = trapezoid_uniform(d1**2, p.h)
    tails = _tail_integral(d1[0] ** 2, p.decay_rate) + _tail_integral(d1[-1] ** 2, p.decay_rate)
    return float(core + tails)


def surface_tension_equipartition(p, well=None):
    """Same constant computed as integral of 2 f(theta0)."""
    well = well or p.meta.get("well") or DoubleWell.standard()
    g = 2.0 * well.f(p.values)
    tails = _tail_integral(g[0], p.decay_rate) + _tail_integral(g[-1], p.decay_rate)
    return float(trapezoid_uniform(g, p.h) + tails)


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


def smooth_step_derivative(x):
    x = np.asarray(x, dtype=float)
    inner = (x > 0) & (x < 1)
    out = np.zeros_like(x)
    xi = x[inner]
    a = np.exp(-1.0 / xi)
    b = np.exp(-1.0 / (1.0 - xi))
    da = a / xi**2
    db = -b / (1.0 - xi) ** 2
    out[inner] = (da * b - a * db) / (a + b) ** 2
    return out


def eta_profile(rho, kind="tanh"):
    """Velocity blending function eta: 0 at -inf, 1 at +inf, nondecreasing.

    ``kind="tanh"`` gives (1 + tanh rho)/2; ``kind="compact"`` is exactly 0
    on (-inf, -1] and 1 on [1, inf).
    """
    rho = np.asarray(rho, dtype=float)
    if kind == "tanh":
        vals = 0.5 * (1.0 + np.tanh(rho))
        der = 0.5 / np.cosh(rho) ** 2
        rate = 2.0
    elif kind == "compact":
        vals = smooth_step(0.5 * (rho + 1.0))
        der = 0.5 * smooth_step_derivative(0.5 * (rho + 1.0))
        rate = 50.0
    else:
        raise ValueError(f"unknown eta kind {kind!r}")
    return Profile(rho, vals, der, limit_minus=0.0, limit_plus=1.0, decay_rate=rate,
                   name=f"eta[{kind}]")


@dataclass(frozen=True)
class ExpansionConstants:
    sigma: float
    sigma_eta: float
    sigma0: float
    sigma0_eta: float
    sigma2: float

    def as_dict(self):
        return dict(self.__dict__)


def expansion_constants(p, eta, visc):
    """Layer integrals entering the expansion.

    ``sigma0`` uses theta0'^2 (the normalization the compatibility condition
    needs); the literal eta'^2 variant is reported as ``sigma0_eta``.
    """
    if not np.array_equal(p.rho, eta.rho):
        eta_vals, eta_der = eta(p.rho), eta(p.rho, 1)
    else:
        eta_vals, eta_der = eta.values, eta.derivs
        if eta_der is None:
            eta_der = fd_derivative(eta_vals, eta.h)
    d1 = p.derivs if p.derivs is not None else fd_derivative(p.values, p.h)
    h = p.h
    nu_theta = np.asarray(visc(p.values), dtype=float) * np.ones_like(p.values)
    sigma = surface_tension(p)
    sigma_eta = float(trapezoid_uniform(nu_theta * eta_der, h))
    sigma0_eta = float(trapezoid_uniform(eta_der**2, h))
    sigma2 = float(trapezoid_uniform(eta_vals * d1**2, h))
    # right tail of eta * theta0'^2 with eta -> 1
    sigma2 += _tail_integral(eta_vals[-1] * d1[-1] ** 2, p.decay_rate)
    return ExpansionConstants(sigma, sigma_eta, sigma, sigma0_eta, sigma2)


@dataclass(frozen=True)
class Cutoff:
    """Smooth cutoff: 1 on |z| <= delta, 0 on |z| >= 2 delta."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        z = np.linspace(self.delta, 2.0 * self.delta, 4001)
        g = -z * self.derivative(z)
        if g.min() < -1e-14 or g.max() > 4.0:
            raise ValueError("cutoff violates 0 <= -z zeta'(z) <= 4")

    def __call__(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        return 1.0 - smooth_step((z - self.delta) / self.delta)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        return -np.sign(z) * smooth_step_derivative((np.abs(z) - self.delta) / self.delta) / self.delta

    def as_profile(self, n=1201):
        z = np.linspace(-3.0 * self.delta, 3.0 * self.delta, n)
        return Profile(z, self(z), self.derivative(z), limit_minus=0.0, limit_plus=0.0,
                       decay_rate=np.inf, name="zeta")


def cutoff_zeta(delta):
    return Cutoff(float(delta))
