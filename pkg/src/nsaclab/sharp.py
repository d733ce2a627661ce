"""Front tracking for convected mean curvature flow and sharp-interface residuals.

The front moves with normal velocity ``V = H + n . v``.  The position is
advanced with ``X_t = X_aa / |X_a|^2 + (n . v) n`` (whose normal part is the
curvature vector), Crank-Nicolson in Fourier space for the stiff part and a
midpoint fixed point for the rest, followed by redistribution to uniform
arclength.
"""

from dataclasses import dataclass

import numpy as np

from ._numerics import centered_weights, fornberg_weights
from .errors import CurvatureBlowup, NsacError, StencilFailure
from .geometry import Interface, TubularMap
from .rates import compare_interfaces


@dataclass(frozen=True)
class FrontState:
    interface: Interface
    t: float = 0.0

    @classmethod
    def circle(cls, R, n=64, center=(0.0, 0.0), t=0.0):
        return cls(Interface.circle(R, n, center, time=t), t)

    def radius(self):
        """Area-equivalent radius."""
        return float(np.sqrt(abs(self.interface.area()) / np.pi))


def _velocity(v, x, t):
    if v is None:
        return np.zeros_like(x)
    out = np.asarray(v(x, t), dtype=float)
    return np.broadcast_to(out, x.shape)


def mcf_convected_step(front, v, dt, curvature=True, redistribute=True, tol=1e-14, maxiter=30):
    """Advance the front by ``dt`` under ``V = H + n . v(x, t)``.

    Parameters
    ----------
    front : FrontState
    v : callable ``v(x, t) -> (..., 2)`` or None
    dt : float
    curvature : bool
        Include the mean curvature term (off gives pure normal convection).

    Raises
    ------
    CurvatureBlowup
        When the front is within one step of extinction or degenerates.
    """
    itf = front.interface
    if not itf.closed:
        raise ValueError("front tracking needs a closed curve")
    X0 = itf.nodes
    n = X0.shape[0]
    t = front.t
    if curvature:
        kmax = np.max(np.abs(itf.nodal_curvature()))
        if dt * kmax**2 > 0.5:
            raise CurvatureBlowup(f"curvature {kmax:.3g} too large for dt={dt:.3g} (extinction)")
    m = np.arange(n // 2 + 1)
    k = 2.0 * np.pi * m
    k2 = k**2
    ik = 1j * k
    if n % 2 == 0:
        ik[-1] = 0.0
    X0h = np.fft.rfft(X0, axis=0)
    X1 = X0.copy()
    scale = max(np.ptp(X0, axis=0).max(), 1e-300)
    for _ in range(maxiter):
        Xm = 0.5 * (X0 + X1)
        Xmh = np.fft.rfft(Xm, axis=0)
        Xa = np.fft.irfft(ik[:, None] * Xmh, n=n, axis=0)
        g = np.sum(Xa**2, axis=1)
        if np.min(g) <= 0:
            raise CurvatureBlowup("parametrization degenerated")
        tau = Xa / np.sqrt(g)[:, None]
        nrm = np.column_stack([-tau[:, 1], tau[:, 0]])
        vel = _velocity(v, Xm, t + 0.5 * dt)
        F = np.sum(vel * nrm, axis=1)[:, None] * nrm
        if curvature:
            gbar = float(np.mean(g))
            Xaa = np.fft.irfft(-k2[:, None] * Xmh, n=n, axis=0)
            F = F + (1.0 / g - 1.0 / gbar)[:, None] * Xaa
            a = 0.5 * dt * k2 / gbar
        else:
            a = np.zeros_like(k2)
        Fh = np.fft.rfft(F, axis=0)
        Xnew = np.fft.irfft(((1.0 - a)[:, None] * X0h + dt * Fh) / (1.0 + a)[:, None], n=n, axis=0)
        change = np.max(np.abs(Xnew - X1))
        X1 = Xnew
        if change <= tol * scale:
            break
    if not np.all(np.isfinite(X1)):
        raise CurvatureBlowup("non-finite node positions")
    new = Interface(X1, t + dt)
    if np.sign(new.area()) != np.sign(itf.area()):
        raise CurvatureBlowup("front orientation flipped (extinction)")
    if redistribute:
        new = new.redistribute()
    return FrontState(new.with_time(t + dt), t + dt)


def evolve(front, t_end, dt, v=None, curvature=True, save_every=1):
    """Step to ``t_end`` (last step shortened); returns the list of saved fronts."""
    out = [front]
    m = 0
    while front.t < t_end - 1e-14 * max(1.0, abs(t_end)):
        h = min(dt, t_end - front.t)
        front = mcf_convected_step(front, v, h, curvature=curvature)
        m += 1
        if m % save_every == 0 or front.t >= t_end - 1e-14 * max(1.0, abs(t_end)):
            out.append(front)
    return out


def area_rate(history):
    """``dA/dt`` between consecutive saved fronts."""
    A = np.array([f.interface.area() for f in history])
    t = np.array([f.t for f in history])
    return np.diff(A) / np.diff(t)


def gage_hamilton_rate(front):
    """``-int H ds`` on the curve, equal to ``-2 pi`` for simple closed curves."""
    itf = front.interface
    sp = np.linalg.norm(itf.nodal_derivative(1), axis=1)
    return -float(np.mean(itf.nodal_curvature() * sp))


def extinction_time(front, dt, v=None):
    """Run until blow-up and extrapolate the area linearly to zero."""
    prev = front
    while True:
        try:
            nxt = mcf_convected_step(prev, v, dt)
        except CurvatureBlowup:
            break
        prev = nxt
    A = abs(prev.interface.area())
    rate = abs(gage_hamilton_rate(prev))
    return prev.t + A / rate


def hausdorff(a, b, m=None):
    """Symmetric Hausdorff distance between two closed curves.

    Uses normal projection of the nodes onto the other curve; if a node
    leaves the tube, falls back to point clouds of dense samplings
    (accurate only to the sampling spacing).
    """
    try:
        return compare_interfaces(a, b)[0]
    except NsacError:
        pass
    from scipy.spatial import cKDTree

    _, pa = a.polygon(m)
    _, pb = b.polygon(m)
    d1 = cKDTree(pb).query(pa)[0].max()
    d2 = cKDTree(pa).query(pb)[0].max()
    return float(max(d1, d2))


# ----------------------------------------------------------------------------
# jump condition and kinematics
# ----------------------------------------------------------------------------

def _one_sided_grad(field, x, nrm, tau, sgn, h, order=4):
    """Gradient of ``field`` at ``x`` from the side ``sgn * n``.

    Normal derivative: one-sided stencil into the phase; tangential
    derivative: centered stencil at the same points, then the value at the
    interface is extrapolated with the normal stencil weights.
    """
    offs = sgn * h * np.arange(order + 1)
    w_n = fornberg_weights(0.0, offs, 1)[:, 1]
    w_0 = fornberg_weights(0.0, offs, 0)[:, 0]
    toff, w_t = centered_weights(1, 4, h)
    tpts = h * toff
    vals, dtan = [], []
    for o in offs:
        base = x + o * nrm
        f0 = np.asarray(field(base), dtype=float)
        if not np.all(np.isfinite(f0)):
            raise StencilFailure("field undefined on the one-sided stencil")
        vals.append(f0)
        acc = 0.0
        for wj, tj in zip(w_t, tpts):
            acc = acc + wj * np.asarray(field(base + tj * tau), dtype=float)
        dtan.append(acc)
    dn = sum(w * f for w, f in zip(w_n, vals))
    dt_ = sum(w * f for w, f in zip(w_0, dtan))
    # grad f = dn (x) n + dt (x) tau ; for vector fields returns J[i, j] = d_j f_i
    if dn.ndim == nrm.ndim:
        return dn[..., :, None] * nrm[..., None, :] + dt_[..., :, None] * tau[..., None, :]
    return dn[..., None] * nrm + dt_[..., None] * tau


def traction(v, p, nu, x, nrm, tau, sgn, h):
    """``(2 nu D v - p I) n`` evaluated from the side ``sgn * n``."""
    J = _one_sided_grad(v, x, nrm, tau, sgn, h)
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    pv = np.asarray(p(x), dtype=float)
    return 2.0 * nu * np.einsum("...ij,...j->...i", D, nrm) - pv[..., None] * nrm


def stress_jump_residual(vp, vm, pp, pm, front, sigma, nu_plus, nu_minus, s=None, h=None):
    """Pointwise ``[[2 nu D v - p I]] n - sigma H n`` on the front.

    ``[[.]]`` is (+ side) minus (- side), the + side lying in the direction
    of ``n``.  Fields are callables of ``x`` of shape (..., 2); pressures
    return (...).
    """
    itf = front.interface if isinstance(front, FrontState) else front
    if s is None:
        s = itf.grid
    if h is None:
        h = 1e-3 * min(itf.min_radius_of_curvature(), itf.length())
    x = itf.position(s)
    tau, nrm = itf.tangent_normal(s)
    H = itf.curvature(s)
    tp = traction(vp, pp, nu_plus, x, nrm, tau, +1.0, h)
    tm = traction(vm, pm, nu_minus, x, nrm, tau, -1.0, h)
    return tp - tm - sigma * H[:, None] * nrm


def kinematic_consistency(history, v=None, probes=None, curvature=True):
    """Max over probes and interior times of ``|d_t d + V(P x)|``.

    ``d_t d`` is a centered difference of the signed distance between saved
    fronts; ``V = H + n . v`` is evaluated on the middle front.
    """
    if len(history) < 3:
        raise ValueError("need at least three fronts")
    worst = 0.0
    for a, b, c in zip(history[:-2], history[1:-1], history[2:]):
        tub_b = TubularMap(b.interface)
        if probes is None:
            s = b.interface.grid[::4]
            r = 0.5 * tub_b.delta
            pts = np.concatenate([tub_b.point(np.full(s.shape, r), s), tub_b.point(np.full(s.shape, -r), s)])
        else:
            pts = np.asarray(probes, dtype=float)
        da = TubularMap(a.interface).signed_distance(pts)
        dc = TubularMap(c.interface).signed_distance(pts)
        ddt = (dc - da) / (c.t - a.t)
        _, sp_ = tub_b.project(pts)
        _, nrm = b.interface.tangent_normal(sp_)
        X = b.interface.position(sp_)
        V = np.sum(_velocity(v, X, b.t) * nrm, axis=-1)
        if curvature:
            V = V + b.interface.curvature(sp_)
        worst = max(worst, float(np.max(np.abs(ddt + V))))
    return worst


# ----------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------

def write_history(path, history):
    """CSV with columns ``t,s,x,y``."""
    rows = []
    for f in history:
        itf = f.interface
        rows.append(np.column_stack([np.full(itf.n, f.t), itf.grid, itf.nodes]))
    np.savetxt(path, np.vstack(rows), delimiter=",", header="t,s,x,y", comments="", fmt="%.17g")


def read_history(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = []
    for t in np.unique(data[:, 0]):
        block = data[data[:, 0] == t]
        block = block[np.argsort(block[:, 1])]
        out.append(FrontState(Interface(block[:, 2:4], t), float(t)))
    return out
