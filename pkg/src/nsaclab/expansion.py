"""Expansion terms: leading velocity, auxiliary fields, approximate solutions
and parabolic height-function equations on the interface.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from ._numerics import periodic_derivative, trapezoid_uniform
from .errors import LayerUnresolved, StepRejected
from .geometry import Interface, InterfaceHistory, TubularMap, stretched_rho
from .height import HeightFunction
from .inner_ode import LineRHS, solve_linearized
from .profile import Cutoff, Profile, cutoff_zeta, profile_derivative_profile, surface_tension

__all__ = [
    "HeightFunction", "AuxField", "ApproxSolution", "C2Family", "leading_velocity",
    "g0_field", "u0_field", "build_cA0", "build_cA_corrected", "solve_c2",
    "surface_parabolic_solve", "h1_evolution", "odd_moment",
]


def _field(v, x):
    """Evaluate a scalar/vector field given as callable, constant or array."""
    if callable(v):
        return np.asarray(v(x), dtype=float)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1 and v.shape == (2,):
        return np.broadcast_to(v, np.shape(x)).copy()
    return v


def leading_velocity(v_plus, v_minus, eta, sc, tub, x, t=None, rho=None):
    """``v0 = v0^+ eta(rho) + v0^- (1 - eta(rho))`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    if rho is None:
        rho = stretched_rho(sc, tub, x, t)
    e = eta(np.asarray(rho, dtype=float))[..., None]
    return _field(v_plus, x) * e + _field(v_minus, x) * (1.0 - e)


def _blend_weight(d, threshold):
    """0 on the curve, 1 for ``|d| >= threshold``, cubic in between."""
    u = np.clip(np.abs(d) / threshold, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class AuxField:
    """Field defined by a difference quotient off the curve and a normal
    derivative on it.

    ``numerator(x)`` vanishes on the curve; off the curve the field is
    ``numerator / d``, on it ``n . grad(numerator)``.  Within ``threshold``
    of the curve the two branches are blended cubically.
    """

    tub: TubularMap
    numerator: Callable
    threshold: float
    step: float
    name: str = ""

    def off_gamma(self, x):
        x = np.asarray(x, dtype=float)
        d = self.tub.signed_distance(x)
        num = self.numerator(x)
        d = d.reshape(d.shape + (1,) * (num.ndim - d.ndim))
        return num / d

    def on_gamma(self, s):
        """Normal derivative of the numerator at ``X0(s)`` (4th-order FD)."""
        s = np.asarray(s, dtype=float)
        h = self.step
        c = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
        offs = np.array([-2.0, -1.0, 1.0, 2.0]) * h
        return sum(ck * self.numerator(self.tub.point(np.full(s.shape, o), s)) for ck, o in zip(c, offs))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pr = self.tub.coordinates(x)
        d = pr.r
        num = self.numerator(x)
        extra = (1,) * (num.ndim - d.ndim)
        w = _blend_weight(d, self.threshold).reshape(d.shape + extra)
        safe = np.where(np.abs(d) > 0, d, 1.0).reshape(d.shape + extra)
        off = num / safe
        inner = np.abs(d) < self.threshold
        out = off.copy()
        if np.any(inner):
            on = self.on_gamma(pr.s[inner])
            out[inner] = w[inner] * off[inner] + (1.0 - w[inner]) * on
        return out


def _normal_velocity_fn(kinematics, t):
    if isinstance(kinematics, InterfaceHistory):
        return lambda s: kinematics.normal_velocity(s, t)
    if callable(kinematics):
        return kinematics
    val = float(kinematics)
    return lambda s: np.full(np.shape(s), val)


def g0_field(tub, v0, kinematics, t=None, threshold=None, step=None, lap_method="metric"):
    """``g0 = (Lap d - v0 . grad d - d_t d) / d`` with its on-curve limit.

    ``kinematics`` gives the normal velocity ``V`` of the curve, either as a
    callable of ``s``, a constant, or an :class:`InterfaceHistory` evaluated at
    ``t``; ``d_t d = -V(P x)``.  ``v0`` is a velocity field (callable of x,
    constant 2-vector, or None for zero).
    """
    V = _normal_velocity_fn(kinematics, t)
    itf = tub.interface

    def numerator(x):
        pr = tub.coordinates(x)
        if np.any(pr.saturated):
            raise ValueError("g0 is only defined inside the tube")
        lap = tub.laplacian_sd(x, method=lap_method)
        _, n = itf.tangent_normal(pr.s)
        adv = 0.0 if v0 is None else np.einsum("...i,...i->...", _field(v0, x), n)
        return lap - adv + V(pr.s)

    h = step or tub.fd_step
    return AuxField(tub, numerator, threshold or 3.0 * h, h, "g0")


def u0_field(v_plus, v_minus, tub, threshold=None, step=None):
    """``u0 = (v0^+ - v0^-) / d`` with the normal derivative of the jump on the curve."""
    def numerator(x):
        return _field(v_plus, x) - _field(v_minus, x)

    h = step or tub.fd_step
    return AuxField(tub, numerator, threshold or 3.0 * h, h, "u0")


@dataclass(frozen=True)
class C2Family:
    """``c2(rho, s) = a(s) W1(rho) + b(s) W2(rho)`` for the second-order inner term.

    ``W1`` solves the problem with right-hand side theta0'' and ``W2`` the one
    with ``-rho theta0'``, so ``a = |grad_Gamma h1|^2`` and ``b = g0``.
    """

    W1: Profile
    W2: Profile
    a: np.ndarray
    b: np.ndarray

    def _coef(self, s):
        return (HeightFunction(np.atleast_1d(self.a)[None, :])(s),
                HeightFunction(np.atleast_1d(self.b)[None, :])(s))

    def __call__(self, rho, s, nu=0):
        a, b = self._coef(s)
        return a * self.W1(rho, nu) + b * self.W2(rho, nu)

    def fiber(self, j):
        """Profile of c2 at the j-th s-node."""
        a, b = np.atleast_1d(self.a)[j], np.atleast_1d(self.b)[j]
        vals = a * self.W1.values + b * self.W2.values
        der = a * self.W1.derivs + b * self.W2.derivs
        return Profile(self.W1.rho, vals, der, a * self.W1.limit_minus + b * self.W2.limit_minus,
                       a * self.W1.limit_plus + b * self.W2.limit_plus, self.W1.decay_rate, "c2")


def solve_c2(p, grad_h1_sq, g0):
    """Solve ``-c2'' + f''(theta0) c2 = |grad h1|^2 theta0'' - theta0' rho g0`` per s-node.

    The right-hand side is linear in the two fiber coefficients, so two line
    solves cover every fiber.
    """
    th1 = profile_derivative_profile(p, 1)
    th2 = profile_derivative_profile(p, 2)
    # c2'' - f'' c2 = -(rhs)
    W1 = solve_linearized(LineRHS.sampled(p, -th2.values, (0.0, 0.0)), p)
    W2 = solve_linearized(LineRHS.sampled(p, p.rho * th1.values, (0.0, 0.0)), p)
    return C2Family(W1, W2, np.atleast_1d(np.asarray(grad_h1_sq, float)),
                    np.atleast_1d(np.asarray(g0, float)))


@dataclass(frozen=True)
class Correction:
    c2: object
    height: object
    N: int


@dataclass(frozen=True)
class ApproxSolution:
    """Approximate order parameter ``c_A = zeta(d) c_in + (1 - zeta(d)) sign(d)``."""

    epsilon: float
    tub: TubularMap
    profile: Profile
    zeta: Cutoff
    height: object = 0.0
    corrections: tuple = ()

    def inner(self, r, s, t=None):
        """Inner expansion ``c_A^in`` as a function of normal coordinates."""
        eps = self.epsilon
        from .geometry import _height_eval
        rho = r / eps - _height_eval(self.height, s, t)
        val = self.profile(rho)
        d1 = None
        for c in self.corrections:
            if d1 is None:
                d1 = self.profile(rho, 1)
            hN = _height_eval(c.height, s, t)
            if callable(c.c2) and not isinstance(c.c2, Profile):
                dc2 = c.c2(rho, s, 1)
            else:
                dc2 = c.c2(rho, 1)
            val = val + (eps ** (c.N - 0.5) * d1 + eps ** (c.N + 1.5) * dc2) * hN
        return val

    def __call__(self, x, t=None):
        x = np.asarray(x, dtype=float)
        pr = self.tub.coordinates(x)
        z = self.zeta(pr.r)
        out = np.sign(pr.r)
        out[out == 0] = 1.0
        inside = z > 0
        if np.any(inside):
            cin = self.inner(pr.r[inside], pr.s[inside], t)
            out = out.astype(float)
            out[inside] = z[inside] * cin + (1.0 - z[inside]) * out[inside]
        return out

    def on_grid(self, X, Y, t=None):
        return self(np.stack([X, Y], axis=-1), t)


def build_cA0(eps, tub, p, zeta=None):
    """Leading approximation ``zeta(d) theta0(d/eps) + (1 - zeta(d)) sign(d)``."""
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if eps > tub.delta:
        raise LayerUnresolved(f"epsilon={eps} exceeds the tube half-width {tub.delta}")
    zeta = zeta or cutoff_zeta(tub.delta)
    return ApproxSolution(float(eps), tub, p, zeta)


def build_cA_corrected(base, c2, hN12, N):
    """Add ``(eps^(N-1/2) theta0' + eps^(N+3/2) d_rho c2) h_{N+1/2}`` inside the tube."""
    return replace(base, corrections=base.corrections + (Correction(c2, hN12, int(N)),))


# surface parabolic equations --------------------------------------------------

def _diff_matrix(n):
    """Spectral first-derivative matrix on s_j = j/n (Nyquist dropped)."""
    I = np.eye(n)
    return periodic_derivative(I, deriv=1, axis=0)


def _coef_fn(c, n_vec=False):
    if c is None:
        return lambda s, t: 0.0
    if callable(c):
        return c
    arr = np.asarray(c, dtype=float)
    return lambda s, t: arr


def _geometry_at(geometry, t):
    if isinstance(geometry, InterfaceHistory):
        return geometry.at(t)
    return geometry


def surface_parabolic_solve(geometry, h0, t_end, dt, w=None, a=None, g=None,
                            t0=0.0, save_every=1, cfl=1.0):
    """Solve ``D_t h + w . grad_Gamma h - Lap_Gamma h + a h = g`` on the curve.

    Spectral collocation in ``s``; Crank-Nicolson for the diffusion and
    reaction, second-order Adams-Bashforth for the advection (tangential
    parametrization drift and ``w``) and the forcing.

    Parameters
    ----------
    geometry : Interface or InterfaceHistory
    h0 : array (N,) or HeightFunction
        Initial values on ``s_j = j/N``.
    w : callable ``(s, t) -> (N, 2)`` or None
    a, g : callable ``(s, t) -> (N,)``, constants, or None

    Raises
    ------
    StepRejected
        If ``dt`` violates the explicit advection bound.
    """
    if isinstance(h0, HeightFunction):
        h0 = h0.slice()
    h = np.array(h0, dtype=float)
    n = h.size
    s = np.arange(n) / n
    D = _diff_matrix(n)
    wf, af, gf = _coef_fn(w), _coef_fn(a), _coef_fn(g)
    moving = isinstance(geometry, InterfaceHistory)

    def operators(t):
        itf = _geometry_at(geometry, t)
        if itf.n != n:
            itf = itf.resample(n)
        X1 = itf.nodal_derivative(1)
        sp = np.linalg.norm(X1, axis=1)
        tau = X1 / sp[:, None]
        lap = (D / sp[:, None]) @ (D / sp[:, None])
        adv = np.zeros(n)
        if moving:
            adv += geometry.dt_S(s, t)
        wv = np.asarray(wf(s, t), dtype=float)
        if wv.ndim == 2:
            adv += np.einsum("ij,ij->i", wv, tau) / sp
        elif np.any(wv):
            raise ValueError("w must be a vector field (N, 2)")
        react = np.broadcast_to(np.asarray(af(s, t), float), (n,))
        force = np.broadcast_to(np.asarray(gf(s, t), float), (n,))
        return lap - np.diag(react), adv, force

    nsteps = int(round((t_end - t0) / dt))
    if nsteps < 1 or abs(nsteps * dt - (t_end - t0)) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("t_end - t0 must be a positive multiple of dt")
    A_now, adv_now, f_now = operators(t0)
    static = not moving and not callable(a)
    lu = None
    times, rows = [t0], [h.copy()]
    expl_prev = None
    t = t0
    for m in range(nsteps):
        speed = np.max(np.abs(adv_now)) * np.pi * n
        if dt * speed > cfl:
            raise StepRejected(f"dt={dt:g} violates the advection bound", suggested_dt=0.9 * cfl / speed)
        A_next, adv_next, f_next = operators(t + dt) if not static or callable(g) or callable(w) else (A_now, adv_now, f_now)
        expl = -adv_now * (D @ h)
        if expl_prev is None:
            rhs_ex = expl
        else:
            rhs_ex = 1.5 * expl - 0.5 * expl_prev
        rhs = h / dt + 0.5 * (A_now @ h) + rhs_ex + 0.5 * (f_now + f_next)
        if static:
            if lu is None:
                lu = sla.lu_factor(np.eye(n) / dt - 0.5 * A_now)
            h = sla.lu_solve(lu, rhs)
        else:
            h = np.linalg.solve(np.eye(n) / dt - 0.5 * A_next, rhs)
        expl_prev = expl
        A_now, adv_now, f_now = A_next, adv_next, f_next
        t = t0 + (m + 1) * dt
        if (m + 1) % save_every == 0 or m + 1 == nsteps:
            times.append(t)
            rows.append(h.copy())
    return HeightFunction(np.array(rows), np.array(times))


def odd_moment(p):
    """``int rho theta0'^2`` by quadrature (zero for symmetric wells)."""
    d1 = p.derivs
    return float(trapezoid_uniform(p.rho * d1**2, p.h))


def h1_evolution(geometry, t_end, dt, p, v0=None, v1_normal=None, g0=None,
                 sigma0=None, h0=None, n=None, t0=0.0, save_every=1):
    """Evolve the first height correction ``h1``.

    Solves ``D_t h + v0 . grad_Gamma h - Lap_Gamma h + g0 h
    = sigma0^-1 (int B1 theta0' - int n.v1 theta0'^2)`` with
    ``B1 = -theta0' rho g0``, starting from ``h1 = 0``.  The normal trace
    ``n . v1`` is taken independent of ``rho``.  ``sigma0`` defaults to
    ``int theta0'^2``.
    """
    itf0 = _geometry_at(geometry, t0)
    n = n or itf0.n
    sigma = surface_tension(p)
    sigma0 = sigma if sigma0 is None else float(sigma0)
    m1 = odd_moment(p)
    gf = _coef_fn(g0)
    vf = _coef_fn(v1_normal)

    def forcing(s, t):
        return (-m1 * np.asarray(gf(s, t), float) - sigma * np.asarray(vf(s, t), float)) / sigma0

    h_init = np.zeros(n) if h0 is None else np.asarray(h0, dtype=float)
    return surface_parabolic_solve(geometry, h_init, t_end, dt, w=v0, a=g0, g=forcing,
                                   t0=t0, save_every=save_every)
