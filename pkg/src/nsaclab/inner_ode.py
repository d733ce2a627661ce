"""Model ODE solvers on the real line for the inner expansion.

Two problems are handled:

* the linearized Allen-Cahn problem ``w'' - f''(theta0) w = A`` with
  ``w(0) = 0`` and ``w`` bounded, solvable iff ``int A theta0' = 0``;
* the viscous problem ``(nu(theta0) w')' = B`` with ``w(0) = 0``, solvable
  with bounded ``w'`` iff ``int B = 0``.

Both work on the truncated line of a :class:`~nsaclab.profile.Profile`.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_simpson
from scipy.sparse.linalg import spsolve

from ._numerics import fd_derivative, trapezoid_uniform
from .errors import IncompatibleRHS, NoDecay, NonconvergentBVP
from .profile import DoubleWell, Profile

COMPAT_RTOL = 1e-8


@dataclass(frozen=True)
class LineRHS:
    """Right-hand side sampled on a profile grid with its far-field limits."""

    rho: np.ndarray
    values: np.ndarray
    limit_minus: float = 0.0
    limit_plus: float = 0.0
    decay_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != self.rho.shape:
            raise ValueError("values must be sampled on rho")

    @classmethod
    def from_profile(cls, prof, grid=None):
        """Wrap a Profile, optionally resampled on ``grid``."""
        if grid is None or np.array_equal(grid, prof.rho):
            vals = prof.values
            grid = prof.rho
        else:
            vals = prof(grid)
        return cls(grid, vals, prof.limit_minus, prof.limit_plus, prof.decay_rate)

    @classmethod
    def sampled(cls, p, values, limits=None):
        """Samples on the grid of profile ``p``; limits default to end values."""
        values = np.asarray(values, dtype=float)
        if limits is None:
            limits = (float(values[0]), float(values[-1]))
        return cls(p.rho, values, float(limits[0]), float(limits[1]), p.decay_rate)

    def __add__(self, other):
        return LineRHS(self.rho, self.values + other.values,
                       self.limit_minus + other.limit_minus,
                       self.limit_plus + other.limit_plus,
                       min(self.decay_rate, other.decay_rate))

    def __mul__(self, a):
        return LineRHS(self.rho, a * self.values, a * self.limit_minus,
                       a * self.limit_plus, self.decay_rate)

    __rmul__ = __mul__

    @property
    def h(self):
        return float(self.rho[1] - self.rho[0])


def _as_rhs(A, p):
    if isinstance(A, LineRHS):
        if not np.array_equal(A.rho, p.rho):
            raise ValueError("right-hand side and profile grids differ")
        return A
    if isinstance(A, Profile):
        return LineRHS.from_profile(A, p.rho)
    if callable(A):
        return LineRHS.sampled(p, A(p.rho))
    return LineRHS.sampled(p, A)


def _theta_derivs(p):
    d1 = p.derivs
    d2 = p.meta.get("second")
    if d1 is None:
        d1 = fd_derivative(p.values, p.h, accuracy=8)
    if d2 is None:
        d2 = fd_derivative(p.values, p.h, deriv=2, accuracy=8)
    return d1, d2


def _well(p):
    return p.meta.get("well") or DoubleWell.standard()


def compatibility_ac(A, p):
    """``int A theta0'`` over the line, including the exponential tails."""
    A = _as_rhs(A, p)
    d1, _ = _theta_derivs(p)
    g = A.values * d1
    a = p.decay_rate + A.decay_rate if A.limit_plus == 0 else p.decay_rate
    b = p.decay_rate + A.decay_rate if A.limit_minus == 0 else p.decay_rate
    return float(trapezoid_uniform(g, p.h) + g[-1] / a + g[0] / b)


def _compat_scale(A, p):
    d1, _ = _theta_derivs(p)
    na = np.sqrt(trapezoid_uniform(A.values**2, p.h))
    nt = np.sqrt(trapezoid_uniform(d1**2, p.h))
    return float(na * nt)


def _numerov_matrix(q, h, alpha_minus, alpha_plus):
    """Numerov operator for w'' - q w with one-sided Robin closures."""
    n = q.size
    c = h * h / 12.0
    lower = np.zeros(n - 1)
    diag = np.zeros(n)
    upper = np.zeros(n - 1)
    lower[:-1] = 1.0 - c * q[:-2]
    diag[1:-1] = -2.0 - 10.0 * c * q[1:-1]
    upper[1:] = 1.0 - c * q[2:]
    M = sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="lil")
    # (w - w^+)' = -alpha (w - w^+) at the right end, mirrored on the left
    M[n - 1, n - 1] = 3.0 / (2.0 * h) + alpha_plus
    M[n - 1, n - 2] = -4.0 / (2.0 * h)
    M[n - 1, n - 3] = 1.0 / (2.0 * h)
    M[0, 0] = -3.0 / (2.0 * h) - alpha_minus
    M[0, 1] = 4.0 / (2.0 * h)
    M[0, 2] = -1.0 / (2.0 * h)
    return M


def _numerov_load(g, h):
    out = np.zeros_like(g)
    out[1:-1] = h * h / 12.0 * (g[:-2] + 10.0 * g[1:-1] + g[2:])
    return out


def solve_linearized(A, p, check=True):
    """Solve ``w'' - f''(theta0) w = A``, ``w(0) = 0``, ``w`` bounded.

    The discrete problem is bordered with an unknown multiple of theta0' in
    the load and the extra row ``w(0) = 0``; for compatible data the
    multiplier is at discretization level.  The ends use Robin closures
    ``(w - w^+-)' = -+alpha (w - w^+-)`` with ``w^+- = -A^+-/f''(+-1)``.

    Raises
    ------
    IncompatibleRHS
        If ``int A theta0'`` exceeds the relative tolerance.
    """
    A = _as_rhs(A, p)
    well = _well(p)
    defect = compatibility_ac(A, p)
    scale = _compat_scale(A, p)
    if check and abs(defect) > COMPAT_RTOL * max(scale, 1e-300) and abs(defect) > 1e-14:
        raise IncompatibleRHS(
            f"right-hand side is not orthogonal to theta0' (defect {defect:.3e})",
            defect=defect,
        )
    rho, h, n = p.rho, p.h, p.rho.size
    if n % 2 == 0 or abs(rho[n // 2]) > 1e-12:
        raise ValueError("profile grid must be odd and symmetric about 0")
    q = well.d2f(p.values)
    a_p = float(np.sqrt(well.d2f(1.0)))
    a_m = float(np.sqrt(well.d2f(-1.0)))
    w_p = -A.limit_plus / well.d2f(1.0)
    w_m = -A.limit_minus / well.d2f(-1.0)
    d1, _ = _theta_derivs(p)

    M = _numerov_matrix(q, h, a_m, a_p)
    rhs = _numerov_load(A.values, h)
    rhs[-1] = a_p * w_p
    rhs[0] = -a_m * w_m
    border_col = -_numerov_load(d1, h)
    row = np.zeros(n)
    row[n // 2] = 1.0
    K = sp.bmat([[M.tocsr(), sp.csr_matrix(border_col[:, None])],
                 [sp.csr_matrix(row[None, :]), None]], format="csc")
    sol = spsolve(K, np.append(rhs, 0.0))
    if not np.all(np.isfinite(sol)):
        raise NonconvergentBVP("linearized solve produced non-finite values")
    w = sol[:n]
    dw = fd_derivative(w, h, accuracy=8)
    return Profile(rho, w, dw, limit_minus=w_m, limit_plus=w_p,
                   decay_rate=min(a_p, a_m), name="w_lin",
                   meta={"multiplier": float(sol[n]), "defect": defect})


def linearized_residual(w, A, p, accuracy=8):
    """Sup-norm of ``w'' - f''(theta0) w - A`` by finite differences."""
    A = _as_rhs(A, p)
    well = _well(p)
    d2 = fd_derivative(w.values, p.h, deriv=2, accuracy=accuracy)
    return d2 - well.d2f(p.values) * w.values - A.values


def solve_viscous(B, p, visc=None, check=True):
    """Solve ``(nu(theta0) w')' = B`` with ``w(0) = 0`` and bounded ``w'``.

    Implements ``w = int_0^rho nu(theta0)^-1 int_-inf^r B`` by nested
    cumulative Simpson quadrature, the inner integral starting from the
    analytic exponential tail beyond the grid.
    """
    B = _as_rhs(B, p)
    if B.limit_minus != 0.0 or B.limit_plus != 0.0:
        if abs(B.limit_minus) > 1e-12 or abs(B.limit_plus) > 1e-12:
            raise IncompatibleRHS("B must decay at both ends", defect=np.inf)
    h = p.h
    g = B.values
    rate = B.decay_rate
    total = float(trapezoid_uniform(g, h) + (g[0] + g[-1]) / rate)
    scale = float(trapezoid_uniform(np.abs(g), h))
    if check and abs(total) > COMPAT_RTOL * max(scale, 1e-300) and abs(total) > 1e-14:
        raise IncompatibleRHS(f"integral of B is {total:.3e}, not zero", defect=total)
    inner = g[0] / rate + cumulative_simpson(g, dx=h, initial=0.0)
    nu = np.ones_like(g) if visc is None else np.asarray(visc(p.values), float) * np.ones_like(g)
    if np.any(nu <= 0):
        raise ValueError("viscosity must be positive")
    slope = inner / nu
    outer = cumulative_simpson(slope, dx=h, initial=0.0)
    w = outer - outer[p.rho.size // 2]
    # bounded w' tends to 0, so w is constant in the tails
    return Profile(p.rho, w, slope, limit_minus=float(w[0]), limit_plus=float(w[-1]),
                   decay_rate=p.decay_rate, name="w_visc", meta={"defect": total})


def viscous_residual(w, B, p, visc=None, accuracy=8):
    B = _as_rhs(B, p)
    nu = np.ones_like(p.values) if visc is None else np.asarray(visc(p.values), float) * np.ones_like(p.values)
    flux = nu * fd_derivative(w.values, p.h, accuracy=accuracy)
    return fd_derivative(flux, p.h, accuracy=accuracy) - B.values


@dataclass(frozen=True)
class TailFit:
    alpha_minus: float
    alpha_plus: float
    C_minus: float
    C_plus: float
    alpha_expected: float

    @property
    def alpha(self):
        return min(self.alpha_minus, self.alpha_plus)

    @property
    def C(self):
        return max(self.C_minus, self.C_plus)

    @property
    def passed(self):
        return self.alpha >= 0.9 * self.alpha_expected


def _fit_side(r, dev, floor):
    keep = dev > floor
    if keep.sum() < 3:
        return np.inf, 0.0
    r, dev = r[keep], dev[keep]
    # tolerate round-off wiggles of relative size 1e-6
    if np.any(np.diff(dev) > 1e-6 * dev[:-1] + floor):
        raise NoDecay("tail deviation is not monotonically decreasing")
    slope, icpt = np.polyfit(r, np.log(dev), 1)
    return float(-slope), float(np.exp(icpt))


def matching_residual(w, w_limits, alpha, floor=None):
    """Fit ``|w(+-rho) - w^+-| ~ C exp(-alpha rho)`` on the outer grid third.

    ``w_limits`` is ``(w_plus, w_minus)``.  Points below a round-off floor
    are discarded; an identically converged tail reports ``alpha = inf``.
    """
    w_plus, w_minus = w_limits
    rho = w.rho
    L = rho[-1]
    if floor is None:
        floor = 1e-11 * max(1.0, float(np.max(np.abs(w.values))))
    right = rho >= L / 3.0
    left = rho <= -L / 3.0
    a_p, c_p = _fit_side(rho[right], np.abs(w.values[right] - w_plus), floor)
    r_left = -rho[left][::-1]
    a_m, c_m = _fit_side(r_left, np.abs(w.values[left][::-1] - w_minus), floor)
    return TailFit(a_m, a_p, c_m, c_p, float(alpha))
