"""Time stepping of the Navier-Stokes/Allen-Cahn system on a 2D grid.

Two discretizations are provided:

* ``spectral`` (periodic box): Fourier collocation.  Odd derivatives drop the
  Nyquist mode so the discrete gradient is skew-adjoint and the Leray
  projector is orthogonal.
* ``mac`` (walled box): staggered MAC grid with ``v = 0`` and ``c = -1`` on
  the walls, imposed through ghost values.

The coupled step is linear and unconditionally energy stable:

* Allen-Cahn with stabilized explicit ``f'`` and the transport velocity
  ``u* = v^n + dt mu grad c^n``;
* momentum with implicit skew-symmetric convection and variable viscosity,
  driven by ``mu grad c^n``;
* non-incremental pressure projection.

It satisfies ``E^{n+1} <= E^n - dt * (dissipation)`` up to solver tolerance.
For Allen-Cahn alone on a periodic box, a fourth-order exponential
integrator (ETDRK4) is also available.
"""

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, gmres, splu, spsolve

from .errors import MultipleComponents, NoCrossing, SolverNonconvergence, StepRejected
from .geometry import Interface
from .profile import DoubleWell


# ----------------------------------------------------------------------------
# grid, parameters, state
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[x0, x0 + Lx) x [y0, y0 + Ly)``.

    Periodic grids place nodes at ``x0 + i hx``; walled (MAC) grids place
    cell centers at ``x0 + (i + 1/2) hx``.
    """

    nx: int
    ny: int
    Lx: float
    Ly: float
    x0: float = 0.0
    y0: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 points per direction")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("box lengths must be positive")
        if not self.periodic and abs(self.hx - self.hy) > 1e-12 * self.hx:
            raise ValueError("walled grids need square cells")

    @classmethod
    def centered_box(cls, n, L, periodic=True):
        """Square box ``[-L/2, L/2)^2`` with ``n`` points per side."""
        return cls(n, n, L, L, -L / 2.0, -L / 2.0, periodic)

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def mode(self):
        return "spectral" if self.periodic else "mac"

    def axes(self):
        off = 0.0 if self.periodic else 0.5
        x = self.x0 + (np.arange(self.nx) + off) * self.hx
        y = self.y0 + (np.arange(self.ny) + off) * self.hy
        return x, y

    def coords(self):
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def points(self):
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    def as_dict(self):
        return dict(nx=self.nx, ny=self.ny, Lx=self.Lx, Ly=self.Ly, x0=self.x0,
                    y0=self.y0, periodic=self.periodic)


def smooth_heaviside(c):
    """C1 ramp: 0 for c <= -1, 1 for c >= 1, ``1/2 + 3c/4 - c^3/4`` between."""
    c = np.clip(c, -1.0, 1.0)
    return 0.5 + 0.75 * c - 0.25 * c**3


@dataclass(frozen=True)
class ModelParams:
    """Model and discretization parameters.

    ``capillary`` selects the force used in the momentum equation:
    ``"chemical"`` (``mu grad c``, required for the energy estimate),
    ``"stress"`` (``-eps div(grad c x grad c)``) or ``"laplace"``
    (``-eps Lap c grad c``).  The three differ by gradients.
    """

    eps: float
    dt: float
    grid: Grid
    nu_plus: float = 1.0
    nu_minus: float = 1.0
    nu: Optional[Callable] = None
    well: DoubleWell = field(default_factory=DoubleWell.standard)
    S: float = 1.0
    capillary: str = "chemical"
    coupling: str = "nsac"
    scheme: str = "imex"
    velocity: Optional[Callable] = None
    cfl_max: float = 1.0
    solver_rtol: float = 1e-13
    nu_clamp: float = 1.5

    def __post_init__(self):
        if not (self.eps > 0 and self.dt > 0):
            raise ValueError("eps and dt must be positive")
        if self.capillary not in ("chemical", "stress", "laplace"):
            raise ValueError(f"unknown capillary form {self.capillary!r}")
        if self.coupling not in ("nsac", "ac"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.scheme not in ("imex", "etdrk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "etdrk4" and (self.coupling != "ac" or not self.grid.periodic):
            raise ValueError("ETDRK4 is available for periodic Allen-Cahn only")
        c = np.linspace(-1.0 - 0.5, 1.0 + 0.5, 301)
        if np.min(self.viscosity(c)[0]) <= 0:
            raise ValueError("viscosity must stay positive")

    def viscosity(self, c):
        """``nu(c)`` on ``c`` clamped to ``[-nu_clamp, nu_clamp]``; returns (nu, clamp count)."""
        c = np.asarray(c, dtype=float)
        clamped = int(np.count_nonzero(np.abs(c) > self.nu_clamp))
        cc = np.clip(c, -self.nu_clamp, self.nu_clamp)
        if self.nu is not None:
            return np.asarray(self.nu(cc), dtype=float) * np.ones_like(cc), clamped
        return self.nu_minus + (self.nu_plus - self.nu_minus) * smooth_heaviside(cc), clamped

    def with_dt(self, dt):
        return replace(self, dt=float(dt))

    def as_dict(self):
        return dict(eps=self.eps, dt=self.dt, grid=self.grid.as_dict(), nu_plus=self.nu_plus,
                    nu_minus=self.nu_minus, well=self.well.name, S=self.S,
                    capillary=self.capillary, coupling=self.coupling, scheme=self.scheme)


@dataclass(frozen=True)
class SimState:
    """Velocity ``v = (vx, vy)``, pressure ``p``, order parameter ``c``, time ``t``.

    In ``mac`` mode ``vx`` has shape (nx+1, ny) and ``vy`` (nx, ny+1),
    wall faces included; otherwise all fields are (nx, ny) nodal arrays.
    """

    v: tuple
    p: np.ndarray
    c: np.ndarray
    t: float = 0.0
    step: int = 0
    info: dict = field(default_factory=dict, compare=False)

    @classmethod
    def at_rest(cls, grid, c, t=0.0):
        c = np.asarray(c, dtype=float)
        if c.shape != (grid.nx, grid.ny):
            raise ValueError("c must have shape (nx, ny)")
        return cls(zero_velocity(grid), np.zeros_like(c), c.copy(), float(t))

    def with_velocity(self, vx, vy):
        return replace(self, v=(np.asarray(vx, float), np.asarray(vy, float)))


def zero_velocity(grid):
    if grid.periodic:
        return (np.zeros((grid.nx, grid.ny)), np.zeros((grid.nx, grid.ny)))
    return (np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))


# ----------------------------------------------------------------------------
# spectral operators
# ----------------------------------------------------------------------------

class SpectralOps:
    """Fourier operators on a periodic grid (real FFT along y)."""

    def __init__(self, grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=grid.hx)
        ky = 2.0 * np.pi * np.fft.rfftfreq(ny, d=grid.hy)
        self.k2 = kx[:, None] ** 2 + ky[None, :] ** 2
        kxo, kyo = kx.copy(), ky.copy()
        if nx % 2 == 0:
            kxo[nx // 2] = 0.0
        if ny % 2 == 0:
            kyo[-1] = 0.0
        self.ikx = (1j * kxo)[:, None] * np.ones((1, ky.size))
        self.iky = np.ones((nx, 1)) * (1j * kyo)[None, :]
        self.k2odd = (kxo[:, None] ** 2 + kyo[None, :] ** 2)
        self.shape = (nx, ny)

    def fwd(self, u):
        return np.fft.rfft2(u)

    def inv(self, U):
        return np.fft.irfft2(U, s=self.shape)

    def dx(self, u):
        return self.inv(self.ikx * self.fwd(u))

    def dy(self, u):
        return self.inv(self.iky * self.fwd(u))

    def grad(self, u):
        U = self.fwd(u)
        return self.inv(self.ikx * U), self.inv(self.iky * U)

    def div(self, fx, fy):
        return self.inv(self.ikx * self.fwd(fx) + self.iky * self.fwd(fy))

    def lap(self, u):
        return self.inv(-self.k2 * self.fwd(u))

    def lap_div_grad(self, u):
        """``div(grad u)`` (Nyquist modes dropped, consistent with :meth:`div` and :meth:`grad`)."""
        return self.inv(-self.k2odd * self.fwd(u))

    def _pad_index(self, n, m):
        kpos = (n + 1) // 2
        kneg = n // 2 - (1 if n % 2 == 0 else 0)
        src = np.r_[0:kpos, n - kneg:n]
        dst = np.r_[0:kpos, m - kneg:m]
        return src, dst

    def product(self, a, b):
        """Dealiased product (3/2 rule); Nyquist modes of the inputs are dropped."""
        nx, ny = self.shape
        mx, my = nx + nx // 2, ny + ny // 2
        sx, dx_ = self._pad_index(nx, mx)
        sy, dy_ = self._pad_index(ny, my)
        scale = (mx * my) / (nx * ny)

        def up(u):
            P = np.zeros((mx, my), dtype=complex)
            P[np.ix_(dx_, dy_)] = np.fft.fft2(u)[np.ix_(sx, sy)]
            return np.fft.ifft2(P).real * scale

        W = np.fft.fft2(up(a) * up(b))
        out = np.zeros((nx, ny), dtype=complex)
        out[np.ix_(sx, sy)] = W[np.ix_(dx_, dy_)]
        return np.fft.ifft2(out).real / scale

    def solve_helmholtz(self, rhs, a, b):
        """Solve ``a u - b Lap u = rhs`` for constants a > 0, b >= 0."""
        return self.inv(self.fwd(rhs) / (a + b * self.k2))

    def project(self, vx, vy):
        """Orthogonal Leray projection; returns ``(vx, vy, phi)`` with ``v - grad phi``."""
        Vx, Vy = self.fwd(vx), self.fwd(vy)
        D = self.ikx * Vx + self.iky * Vy
        with np.errstate(divide="ignore", invalid="ignore"):
            Phi = np.where(self.k2odd > 0, -D / self.k2odd, 0.0)
        return (self.inv(Vx - self.ikx * Phi), self.inv(Vy - self.iky * Phi), self.inv(Phi))

    def sym_grad(self, vx, vy):
        """``(Dxx, Dyy, Dxy)`` of the symmetric gradient."""
        Vx, Vy = self.fwd(vx), self.fwd(vy)
        dxx = self.inv(self.ikx * Vx)
        dyy = self.inv(self.iky * Vy)
        dxy = 0.5 * self.inv(self.iky * Vx + self.ikx * Vy)
        return dxx, dyy, dxy

    def viscous(self, nu, vx, vy):
        """``-div(2 nu D v)``."""
        dxx, dyy, dxy = self.sym_grad(vx, vy)
        fx = -self.div(2.0 * nu * dxx, 2.0 * nu * dxy)
        fy = -self.div(2.0 * nu * dxy, 2.0 * nu * dyy)
        return fx, fy

    def convect(self, ax, ay, wx, wy):
        """Skew-symmetric ``1/2 [(a.grad) w + div(a x w)]``."""
        out = []
        for w in (wx, wy):
            gx, gy = self.grad(w)
            adv = ax * gx + ay * gy
            cons = self.div(ax * w, ay * w)
            out.append(0.5 * (adv + cons))
        return out


@lru_cache(maxsize=16)
def spectral_ops(grid):
    return SpectralOps(grid)


# ----------------------------------------------------------------------------
# MAC operators
# ----------------------------------------------------------------------------

class MacOps:
    """Sparse staggered-grid operators with no-slip, ``c = -1`` walls.

    Unknowns: cell values (nx*ny), interior x-faces ((nx-1)*ny), interior
    y-faces (nx*(ny-1)).  All inner products use unit weights (common factor
    h^2 dropped) except the wall faces of the c-gradient, weighted 1/2.
    """

    def __init__(self, grid):
        self.grid = grid
        nx, ny, h = grid.nx, grid.ny, grid.hx
        self.h = h
        self.nc = nx * ny
        self.nu_ = (nx - 1) * ny
        self.nw_ = nx * (ny - 1)
        cid = np.arange(self.nc).reshape(nx, ny)
        self.cid = cid
        uid = np.arange(self.nu_).reshape(nx - 1, ny)
        wid = np.arange(self.nw_).reshape(nx, ny - 1)
        self.uid, self.wid = uid, wid

        # gradients cells -> interior faces
        r = uid.ravel()
        self.Gx = sp.csr_matrix(
            (np.r_[np.full(r.size, 1.0 / h), np.full(r.size, -1.0 / h)],
             (np.r_[r, r], np.r_[cid[1:, :].ravel(), cid[:-1, :].ravel()])),
            shape=(self.nu_, self.nc))
        r = wid.ravel()
        self.Gy = sp.csr_matrix(
            (np.r_[np.full(r.size, 1.0 / h), np.full(r.size, -1.0 / h)],
             (np.r_[r, r], np.r_[cid[:, 1:].ravel(), cid[:, :-1].ravel()])),
            shape=(self.nw_, self.nc))
        self.G = sp.vstack([self.Gx, self.Gy]).tocsr()
        self.Div = (-self.G.T).tocsr()

        # Dirichlet Laplacian for e = c + 1 (ghost e = -e at the walls)
        Lint = -(self.G.T @ self.G)
        wall = np.zeros((nx, ny))
        wall[0, :] += 2.0
        wall[-1, :] += 2.0
        wall[:, 0] += 2.0
        wall[:, -1] += 2.0
        self.Lap = (Lint - sp.diags(wall.ravel() / h**2)).tocsr()
        self._wall_weight = wall.ravel()

        # face -> cell averaging (adjoint-consistent transport)
        r = uid.ravel()
        self.Ax = sp.csr_matrix(
            (np.full(2 * r.size, 0.5), (np.r_[cid[1:, :].ravel(), cid[:-1, :].ravel()], np.r_[r, r])),
            shape=(self.nc, self.nu_))
        r = wid.ravel()
        self.Ay = sp.csr_matrix(
            (np.full(2 * r.size, 0.5), (np.r_[cid[:, 1:].ravel(), cid[:, :-1].ravel()], np.r_[r, r])),
            shape=(self.nc, self.nw_))

        self._build_strain()
        # pressure Poisson with the first cell pinned
        P = (self.G.T @ self.G).tocsc()
        self._poisson = splu(P[1:, 1:].tocsc())

    def _build_strain(self):
        g, h = self.grid, self.h
        nx, ny = g.nx, g.ny
        cid, uid, wid = self.cid, self.uid, self.wid
        rows, cols, vals = [], [], []
        # exx at cells from u (wall u = 0)
        for i in range(nx):
            if i + 1 <= nx - 1:
                rows.append(cid[i, :]); cols.append(uid[i, :]); vals.append(np.full(ny, 1.0 / h))
            if i - 1 >= 0:
                rows.append(cid[i, :]); cols.append(uid[i - 1, :]); vals.append(np.full(ny, -1.0 / h))
        self.Sxx = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(self.nc, self.nu_))
        rows, cols, vals = [], [], []
        for j in range(ny):
            if j + 1 <= ny - 1:
                rows.append(cid[:, j]); cols.append(wid[:, j]); vals.append(np.full(nx, 1.0 / h))
            if j - 1 >= 0:
                rows.append(cid[:, j]); cols.append(wid[:, j - 1]); vals.append(np.full(nx, -1.0 / h))
        self.Syy = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(self.nc, self.nw_))
        # exy at corners (nx+1) x (ny+1): 1/2 (du/dy + dw/dx), ghost-reflected walls
        kid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        self.kid = kid
        ru, cu, vu = [], [], []
        for i in range(1, nx):          # interior x-face columns of u
            for j in range(ny + 1):
                k = kid[i, j]
                if j == 0:
                    ru.append(k); cu.append(uid[i - 1, 0]); vu.append(2.0 / h)
                elif j == ny:
                    ru.append(k); cu.append(uid[i - 1, ny - 1]); vu.append(-2.0 / h)
                else:
                    ru += [k, k]; cu += [uid[i - 1, j], uid[i - 1, j - 1]]; vu += [1.0 / h, -1.0 / h]
        rw, cw, vw = [], [], []
        for j in range(1, ny):
            for i in range(nx + 1):
                k = kid[i, j]
                if i == 0:
                    rw.append(k); cw.append(wid[0, j - 1]); vw.append(2.0 / h)
                elif i == nx:
                    rw.append(k); cw.append(wid[nx - 1, j - 1]); vw.append(-2.0 / h)
                else:
                    rw += [k, k]; cw += [wid[i, j - 1], wid[i - 1, j - 1]]; vw += [1.0 / h, -1.0 / h]
        nk = kid.size
        self.Suy = sp.csr_matrix((0.5 * np.array(vu), (ru, cu)), shape=(nk, self.nu_))
        self.Swx = sp.csr_matrix((0.5 * np.array(vw), (rw, cw)), shape=(nk, self.nw_))
        wk = np.ones((nx + 1, ny + 1))
        wk[0, :] *= 0.5
        wk[-1, :] *= 0.5
        wk[:, 0] *= 0.5
        wk[:, -1] *= 0.5
        self.corner_weight = wk.ravel()

    # conversions -----------------------------------------------------------
    def pack_v(self, vx, vy):
        return np.concatenate([vx[1:-1, :].ravel(), vy[:, 1:-1].ravel()])

    def unpack_v(self, z):
        g = self.grid
        vx = np.zeros((g.nx + 1, g.ny))
        vy = np.zeros((g.nx, g.ny + 1))
        vx[1:-1, :] = z[: self.nu_].reshape(g.nx - 1, g.ny)
        vy[:, 1:-1] = z[self.nu_:].reshape(g.nx, g.ny - 1)
        return vx, vy

    def corner_nu(self, nu_cells):
        g = self.grid
        pad = np.pad(nu_cells, 1, mode="edge")
        return 0.25 * (pad[:-1, :-1] + pad[1:, :-1] + pad[:-1, 1:] + pad[1:, 1:]).ravel()[: (g.nx + 1) * (g.ny + 1)]

    def viscous_matrix(self, nu_cells):
        """``S^T W S`` with ``W = 2 nu`` on cells and ``4 nu`` (times corner weight) on corners."""
        nc = nu_cells.ravel()
        nk = self.corner_nu(nu_cells) * self.corner_weight
        Sx = sp.hstack([self.Sxx, sp.csr_matrix((self.nc, self.nw_))])
        Sy = sp.hstack([sp.csr_matrix((self.nc, self.nu_)), self.Syy])
        Sk = sp.hstack([self.Suy, self.Swx])
        return (Sx.T @ sp.diags(2.0 * nc) @ Sx + Sy.T @ sp.diags(2.0 * nc) @ Sy
                + Sk.T @ sp.diags(4.0 * nk) @ Sk).tocsr()

    def strain_energy(self, nu_cells, z):
        """``sum 2 nu |D v|^2`` (unit weights)."""
        nc = nu_cells.ravel()
        nk = self.corner_nu(nu_cells) * self.corner_weight
        u, w = z[: self.nu_], z[self.nu_:]
        exx = self.Sxx @ u
        eyy = self.Syy @ w
        exy = self.Suy @ u + self.Swx @ w
        return float(np.sum(2.0 * nc * (exx**2 + eyy**2)) + np.sum(4.0 * nk * exy**2))

    def convection_matrix(self, vx, vy):
        """Skew part of the central ``(a . grad)`` operator for advecting field ``a = (vx, vy)``."""
        g, h = self.grid, self.h
        nx, ny = g.nx, g.ny
        uid, wid = self.uid, self.wid
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.ravel(r)); cols.append(np.ravel(c)); vals.append(np.ravel(v))

        # u-equation at interior x-faces (i = 1..nx-1)
        I, J = np.meshgrid(np.arange(1, nx), np.arange(ny), indexing="ij")
        ua = vx[1:-1, :]
        wa = 0.25 * (vy[:-1, :-1] + vy[1:, :-1] + vy[:-1, 1:] + vy[1:, 1:])
        r = uid[I - 1, J]
        m = I + 1 <= nx - 1
        add(r[m], uid[I[m], J[m]], ua[m] / (2 * h))
        m = I - 1 >= 1
        add(r[m], uid[I[m] - 2, J[m]], -ua[m] / (2 * h))
        m = J + 1 <= ny - 1
        add(r[m], uid[I[m] - 1, J[m] + 1], wa[m] / (2 * h))
        m = J + 1 > ny - 1
        add(r[m], r[m], wa[m] / (2 * h))          # ghost u = -u at the top wall
        m = J - 1 >= 0
        add(r[m], uid[I[m] - 1, J[m] - 1], -wa[m] / (2 * h))
        m = J - 1 < 0
        add(r[m], r[m], wa[m] / (2 * h))          # ghost at the bottom wall
        # w-equation at interior y-faces (j = 1..ny-1)
        I, J = np.meshgrid(np.arange(nx), np.arange(1, ny), indexing="ij")
        wa = vy[:, 1:-1]
        ua = 0.25 * (vx[:-1, :-1] + vx[1:, :-1] + vx[:-1, 1:] + vx[1:, 1:])
        off = self.nu_
        r = off + wid[I, J - 1]
        m = J + 1 <= ny - 1
        add(r[m], off + wid[I[m], J[m]], wa[m] / (2 * h))
        m = J - 1 >= 1
        add(r[m], off + wid[I[m], J[m] - 2], -wa[m] / (2 * h))
        m = I + 1 <= nx - 1
        add(r[m], off + wid[I[m] + 1, J[m] - 1], ua[m] / (2 * h))
        m = I + 1 > nx - 1
        add(r[m], r[m], ua[m] / (2 * h))
        m = I - 1 >= 0
        add(r[m], off + wid[I[m] - 1, J[m] - 1], -ua[m] / (2 * h))
        m = I - 1 < 0
        add(r[m], r[m], ua[m] / (2 * h))
        n = self.nu_ + self.nw_
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return (0.5 * (A - A.T)).tocsr()

    def project(self, z):
        rhs = self.G.T @ z
        phi = np.zeros(self.nc)
        phi[1:] = self._poisson.solve(rhs[1:])
        return z - self.G @ phi, phi

    def grad_c_faces(self, c):
        return self.G @ (c.ravel() + 1.0)

    def grad_c_cells(self, c):
        """Cell-averaged ``|grad c|^2`` from the face gradients."""
        q = self.grad_c_faces(c)
        qx, qy = q[: self.nu_], q[self.nu_:]
        return (self.Ax @ qx**2 + self.Ay @ qy**2)

    def c_boundary(self, c):
        """Wall values ``(c_inside + c_ghost)/2`` with ``c_ghost = -2 - c_inside``."""
        return -np.ones(2 * (c.shape[0] + c.shape[1]))


@lru_cache(maxsize=8)
def mac_ops(grid):
    return MacOps(grid)


# ----------------------------------------------------------------------------
# chemical potential and energy
# ----------------------------------------------------------------------------

def chemical_potential(state, params):
    """``mu = -eps Lap c + f'(c)/eps`` with the stepper's discrete Laplacian."""
    eps, c = params.eps, state.c
    if params.grid.periodic:
        lap = spectral_ops(params.grid).lap(c)
    else:
        ops = mac_ops(params.grid)
        lap = (ops.Lap @ (c.ravel() + 1.0)).reshape(c.shape)
    return -eps * lap + params.well.df(c) / eps


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    interfacial: float
    total: float
    dissipation_rate: float

    def as_dict(self):
        return dict(self.__dict__)


def energy(state, params):
    """Kinetic, interfacial and total energy plus the dissipation rate.

    The dissipation is ``int 2 nu(c)|Dv|^2 + mu^2/eps`` assembled with the
    stepper's operators.
    """
    g, eps, c = params.grid, params.eps, state.c
    area = g.cell_area
    mu = chemical_potential(state, params)
    nu, _ = params.viscosity(c)
    vx, vy = state.v
    if g.periodic:
        ops = spectral_ops(g)
        grad_part = 0.5 * eps * np.sum(c * -ops.lap(c))
        kin = 0.5 * np.sum(vx**2 + vy**2)
        dxx, dyy, dxy = ops.sym_grad(vx, vy)
        visc = np.sum(2.0 * nu * (dxx**2 + dyy**2 + 2.0 * dxy**2))
    else:
        ops = mac_ops(g)
        e = c.ravel() + 1.0
        grad_part = 0.5 * eps * float(e @ (-(ops.Lap @ e)))
        kin = 0.5 * (np.sum(vx**2) + np.sum(vy**2))
        visc = ops.strain_energy(nu, ops.pack_v(vx, vy))
    bulk = np.sum(params.well.f(c)) / eps
    interfacial = area * (grad_part + bulk)
    kinetic = area * kin
    dissipation = area * (visc + np.sum(mu**2) / eps)
    return EnergyReport(float(kinetic), float(interfacial), float(kinetic + interfacial), float(dissipation))


# ----------------------------------------------------------------------------
# stepping
# ----------------------------------------------------------------------------

def _check_cfl(state, params):
    vx, vy = state.v
    vmax = max(np.max(np.abs(vx)), np.max(np.abs(vy)))
    h = min(params.grid.hx, params.grid.hy)
    if vmax * params.dt > params.cfl_max * h:
        raise StepRejected(f"advective CFL exceeded (|v|max={vmax:.3g})",
                           suggested_dt=0.4 * params.cfl_max * h / vmax)


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverNonconvergence("non-finite values after the step")


def _prescribed_velocity(state, params, t):
    if params.velocity is None:
        return state.v
    g = params.grid
    if g.periodic:
        X, Y = g.coords()
        vx, vy = params.velocity(X, Y, t)
        return (np.broadcast_to(vx, X.shape).astype(float), np.broadcast_to(vy, X.shape).astype(float))
    x, y = g.axes()
    xf = g.x0 + np.arange(g.nx + 1) * g.hx
    yf = g.y0 + np.arange(g.ny + 1) * g.hy
    Xu, Yu = np.meshgrid(xf, y, indexing="ij")
    Xw, Yw = np.meshgrid(x, yf, indexing="ij")
    vx = np.broadcast_to(params.velocity(Xu, Yu, t)[0], Xu.shape).astype(float)
    vy = np.broadcast_to(params.velocity(Xw, Yw, t)[1], Xw.shape).astype(float)
    vx[0, :] = vx[-1, :] = 0.0
    vy[:, 0] = vy[:, -1] = 0.0
    return vx, vy


def _capillary_force_spectral(ops, params, c, mu):
    if params.capillary == "chemical":
        gx, gy = ops.grad(c)
        return mu * gx, mu * gy
    f_stress, f_laplace = _capillary_pair(ops, params.eps, c)
    return f_laplace if params.capillary == "laplace" else f_stress


def _capillary_pair(ops, eps, c):
    """Stress and Laplace forms with dealiased quadratic products."""
    gx, gy = ops.grad(c)
    lap = ops.lap_div_grad(c)
    xy = ops.product(gx, gy)
    f1 = (-eps * ops.div(ops.product(gx, gx), xy), -eps * ops.div(xy, ops.product(gy, gy)))
    f2 = (-eps * ops.product(lap, gx), -eps * ops.product(lap, gy))
    return f1, f2


def _step_spectral(state, params):
    g, eps, dt, S = params.grid, params.eps, params.dt, params.S
    ops = spectral_ops(g)
    well = params.well
    c = state.c
    info = {}
    vx, vy = _prescribed_velocity(state, params, state.t) if params.coupling == "ac" else state.v
    moving = bool(np.any(vx) or np.any(vy))
    gx, gy = ops.grad(c)
    ctil = c - dt * (vx * gx + vy * gy) if moving else c
    b = (well.df(c) - S * c) / eps
    coupled = params.coupling == "nsac"
    if coupled:
        a = 1.0 / eps + dt * (gx * gx + gy * gy)
    else:
        a = np.full(c.shape, 1.0 / eps)
    rhs = ctil / (dt * a) - b
    if not coupled:
        y = ops.inv(ops.fwd(rhs) / (eps / dt + S / eps + eps * ops.k2))
        info["ac_iterations"] = 0
    else:
        n = c.size
        inv_da = 1.0 / (dt * a)
        abar = float(np.mean(a))
        denom = 1.0 / (dt * abar) + S / eps + eps * ops.k2
        A = LinearOperator((n, n), dtype=float, matvec=lambda z: (
            inv_da * z.reshape(c.shape) + ops.inv((S / eps + eps * ops.k2) * ops.fwd(z.reshape(c.shape)))).ravel())
        M = LinearOperator((n, n), dtype=float, matvec=lambda z: ops.inv(ops.fwd(z.reshape(c.shape)) / denom).ravel())
        its = [0]

        def cb(_):
            its[0] += 1

        y, flag = cg(A, rhs.ravel(), x0=c.ravel(), rtol=params.solver_rtol, atol=0.0, M=M,
                     maxiter=500, callback=cb)
        if flag != 0:
            raise SolverNonconvergence(f"Allen-Cahn CG did not converge (flag {flag})")
        y = y.reshape(c.shape)
        info["ac_iterations"] = its[0]
    mu = -eps * ops.lap(y) + S * y / eps + b
    _finite(y, mu)
    if not coupled:
        return SimState((vx, vy), state.p, y, state.t + dt, state.step + 1, info)

    # momentum
    nu, clamped = params.viscosity(y)
    info["nu_clamped"] = clamped
    if params.capillary == "chemical":
        fx, fy = mu * gx, mu * gy
    else:
        fx, fy = _capillary_force_spectral(ops, params, c, chemical_potential(state, params))
    v0x, v0y = state.v
    n = c.size
    nu_ref = float(np.max(nu))
    pre = 1.0 / dt + nu_ref * ops.k2

    def op(z):
        wx, wy = z[:n].reshape(c.shape), z[n:].reshape(c.shape)
        cx, cy = ops.convect(v0x, v0y, wx, wy)
        dx_, dy_ = ops.viscous(nu, wx, wy)
        return np.concatenate([(wx / dt + cx + dx_).ravel(), (wy / dt + cy + dy_).ravel()])

    def prec(z):
        return np.concatenate([ops.inv(ops.fwd(z[:n].reshape(c.shape)) / pre).ravel(),
                               ops.inv(ops.fwd(z[n:].reshape(c.shape)) / pre).ravel()])

    rhs = np.concatenate([(v0x / dt + fx).ravel(), (v0y / dt + fy).ravel()])
    Aop = LinearOperator((2 * n, 2 * n), matvec=op, dtype=float)
    Mop = LinearOperator((2 * n, 2 * n), matvec=prec, dtype=float)
    its = [0]

    def cb2(_):
        its[0] += 1

    z, flag = gmres(Aop, rhs, x0=np.concatenate([v0x.ravel(), v0y.ravel()]), rtol=params.solver_rtol,
                    atol=0.0, M=Mop, restart=60, maxiter=50, callback=cb2, callback_type="pr_norm")
    if flag != 0:
        raise SolverNonconvergence(f"momentum GMRES did not converge (flag {flag})")
    info["ns_iterations"] = its[0]
    wx, wy = z[:n].reshape(c.shape), z[n:].reshape(c.shape)
    nx_, ny_, phi = ops.project(wx, wy)
    _finite(nx_, ny_)
    info["div_max"] = float(np.max(np.abs(ops.div(nx_, ny_))))
    return SimState((nx_, ny_), phi / dt, y, state.t + dt, state.step + 1, info)


def _step_mac(state, params):
    g, eps, dt, S = params.grid, params.eps, params.dt, params.S
    ops = mac_ops(g)
    well = params.well
    c = state.c
    info = {}
    vx, vy = _prescribed_velocity(state, params, state.t) if params.coupling == "ac" else state.v
    z0 = ops.pack_v(vx, vy)
    e = c.ravel() + 1.0
    q = ops.G @ e
    qx, qy = q[: ops.nu_], q[ops.nu_:]
    trans = ops.Ax @ (z0[: ops.nu_] * qx) + ops.Ay @ (z0[ops.nu_:] * qy)
    etil = e - dt * trans
    b = (well.df(c.ravel()) - S * e) / eps
    A = (-eps * ops.Lap + sp.identity(ops.nc) * (S / eps)).tocsr()
    coupled = params.coupling == "nsac"
    if coupled:
        # force F = (A^T mu) grad c on faces; transport of F gives K mu
        K = (ops.Ax @ sp.diags(qx**2) @ ops.Ax.T + ops.Ay @ sp.diags(qy**2) @ ops.Ay.T)
        Mmu = sp.identity(ops.nc) / eps + dt * K
    else:
        Mmu = sp.identity(ops.nc) / eps
    lhs = (sp.identity(ops.nc) + dt * (Mmu @ A)).tocsc()
    y = spsolve(lhs, etil - dt * (Mmu @ b))
    mu = A @ y + b
    _finite(y, mu)
    cn = (y - 1.0).reshape(c.shape)
    if not coupled:
        return SimState((vx, vy), state.p, cn, state.t + dt, state.step + 1, info)
    nu, clamped = params.viscosity(cn)
    info["nu_clamped"] = clamped
    F = np.concatenate([(ops.Ax.T @ mu) * qx, (ops.Ay.T @ mu) * qy])
    n = z0.size
    M = (sp.identity(n) / dt + ops.convection_matrix(vx, vy) + ops.viscous_matrix(nu)).tocsc()
    z = spsolve(M, z0 / dt + F)
    z, phi = ops.project(z)
    _finite(z)
    nvx, nvy = ops.unpack_v(z)
    info["div_max"] = float(np.max(np.abs(ops.Div @ z)))
    return SimState((nvx, nvy), phi.reshape(c.shape) / dt, cn, state.t + dt, state.step + 1, info)


class _Etdrk4:
    """ETDRK4 coefficients for ``c_t = Lap c - S c/eps^2 + N(c)`` (contour integrals)."""

    def __init__(self, ops, eps, dt, S, M=32):
        L = -ops.k2 - S / eps**2
        self.E = np.exp(dt * L)
        self.E2 = np.exp(dt * L / 2.0)
        roots = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
        Q = np.zeros_like(L)
        f1 = np.zeros_like(L)
        f2 = np.zeros_like(L)
        f3 = np.zeros_like(L)
        for r in roots:
            z = dt * L + r
            ez = np.exp(z)
            Q += np.real((np.exp(z / 2.0) - 1.0) / z)
            f1 += np.real((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z**3)
            f2 += np.real((2.0 + z + ez * (-2.0 + z)) / z**3)
            f3 += np.real((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z**3)
        self.Q = dt * Q / M
        self.f1 = dt * f1 / M
        self.f2 = dt * f2 / M
        self.f3 = dt * f3 / M


@lru_cache(maxsize=8)
def _etdrk4_coeffs(grid, eps, dt, S):
    return _Etdrk4(spectral_ops(grid), eps, dt, S)


def _step_etdrk4(state, params):
    g, eps, dt, S = params.grid, params.eps, params.dt, params.S
    ops = spectral_ops(g)
    co = _etdrk4_coeffs(g, eps, dt, S)
    well = params.well
    t = state.t

    def N(u, tt):
        val = -(well.df(u) - S * u) / eps**2
        if params.velocity is not None or np.any(state.v[0]) or np.any(state.v[1]):
            vx, vy = _prescribed_velocity(state, params, tt)
            gx, gy = ops.grad(u)
            val = val - (vx * gx + vy * gy)
        return ops.fwd(val)

    v = ops.fwd(state.c)
    Nv = N(state.c, t)
    a = co.E2 * v + co.Q * Nv
    Na = N(ops.inv(a), t + dt / 2)
    b = co.E2 * v + co.Q * Na
    Nb = N(ops.inv(b), t + dt / 2)
    cc = co.E2 * a + co.Q * (2.0 * Nb - Nv)
    Nc = N(ops.inv(cc), t + dt)
    v = co.E * v + Nv * co.f1 + 2.0 * (Na + Nb) * co.f2 + Nc * co.f3
    cn = ops.inv(v)
    _finite(cn)
    vel = _prescribed_velocity(state, params, t + dt) if params.velocity is not None else state.v
    return SimState(vel, state.p, cn, t + dt, state.step + 1, {})


def step(state, params):
    """Advance one time step; see the module docstring for the scheme."""
    if state.c.shape != (params.grid.nx, params.grid.ny):
        raise ValueError("state does not match the grid")
    if params.coupling == "nsac":
        _check_cfl(state, params)
    if params.scheme == "etdrk4":
        return _step_etdrk4(state, params)
    if params.grid.periodic:
        return _step_spectral(state, params)
    return _step_mac(state, params)


def run(state, params, nsteps, callback=None, every=1):
    """Advance ``nsteps`` steps; ``callback(state)`` every ``every`` steps."""
    for m in range(nsteps):
        state = step(state, params)
        if callback is not None and (m + 1) % every == 0:
            callback(state)
    return state


def suggest_dt(params, state=None, safety=0.4):
    """Minimum of the diffusive (eps-scaled) and advective step limits."""
    g = params.grid
    h = min(g.hx, g.hy)
    dt = safety * params.eps**2
    if state is not None:
        vmax = max(np.max(np.abs(state.v[0])), np.max(np.abs(state.v[1])))
        if vmax > 0:
            dt = min(dt, safety * h / vmax)
    return dt


def divergence(state, params):
    if params.grid.periodic:
        return spectral_ops(params.grid).div(*state.v)
    ops = mac_ops(params.grid)
    return (ops.Div @ ops.pack_v(*state.v)).reshape(state.c.shape)


def cell_velocity(state, params):
    """Velocity at the c-nodes (face averages in MAC mode)."""
    vx, vy = state.v
    if params.grid.periodic:
        return vx, vy
    return 0.5 * (vx[1:, :] + vx[:-1, :]), 0.5 * (vy[:, 1:] + vy[:, :-1])


# ----------------------------------------------------------------------------
# capillary forms
# ----------------------------------------------------------------------------

def capillary_forces(state, params):
    """``(stress form, Laplace form)`` of the capillary force on a periodic grid."""
    if not params.grid.periodic:
        raise NotImplementedError("capillary comparison is implemented for periodic grids")
    return _capillary_pair(spectral_ops(params.grid), params.eps, state.c)


def capillary_equivalence_check(state, params):
    """Relative size of the Leray-projected difference of the two capillary forms.

    ``-eps div(grad c x grad c)`` and ``-eps Lap c grad c`` differ by
    ``-eps/2 grad |grad c|^2``.  With dealiased products the discrete
    product rule is exact, so the projection removes it to round-off.
    """
    (ax, ay), (bx, by) = capillary_forces(state, params)
    ops = spectral_ops(params.grid)
    px, py, _ = ops.project(ax - bx, ay - by)
    diff = np.sqrt(np.sum(px**2 + py**2))
    scale = max(np.sqrt(np.sum(ax**2 + ay**2)), np.sqrt(np.sum(bx**2 + by**2)))
    return 0.0 if scale == 0 else float(diff / scale)


# ----------------------------------------------------------------------------
# interface extraction
# ----------------------------------------------------------------------------

def zero_level_set(state, grid, n=128, level=0.0):
    """Extract the zero level set of ``c`` as an :class:`Interface`.

    Marching squares with linear sub-cell interpolation, resampled to ``n``
    nodes equally spaced in arclength and oriented so that ``c > 0`` lies on
    the side of the normal.
    """
    import contourpy

    c = state.c if isinstance(state, SimState) else np.asarray(state, dtype=float)
    x, y = grid.axes()
    if np.all(c > level) or np.all(c < level):
        raise NoCrossing("c does not cross the level")
    gen = contourpy.contour_generator(x, y, c.T, line_type=contourpy.LineType.Separate)
    lines = gen.lines(level)
    if not lines:
        raise NoCrossing("no contour found")
    closed = [ln for ln in lines if len(ln) > 3 and np.allclose(ln[0], ln[-1])]
    if len(lines) != 1 or len(closed) != 1:
        raise MultipleComponents(f"expected one closed contour, found {len(lines)} lines "
                                 f"({len(closed)} closed)")
    pts = closed[0][:-1]
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    L = arc[-1]
    target = L * np.arange(n) / n
    ext = np.vstack([pts, pts[:1]])
    nodes = np.column_stack([np.interp(target, arc, ext[:, 0]), np.interp(target, arc, ext[:, 1])])
    area = 0.5 * np.sum(nodes[:, 0] * np.roll(nodes[:, 1], -1) - np.roll(nodes[:, 0], -1) * nodes[:, 1])
    from matplotlib.path import Path
    X, Y = grid.coords()
    inside = Path(nodes).contains_points(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    if not inside.any() or inside.all():
        raise NoCrossing("degenerate contour")
    plus_inside = np.mean(c[inside]) > np.mean(c[~inside])
    if plus_inside != (area > 0):
        nodes = nodes[::-1]
        nodes = np.roll(nodes, 1, axis=0)
    t = state.t if isinstance(state, SimState) else 0.0
    return Interface(nodes, t)


def level_set_radius(state, grid, n=256):
    """Area-equivalent radius of the zero level set (polygon area of the contour)."""
    import contourpy

    c = state.c if isinstance(state, SimState) else np.asarray(state, dtype=float)
    x, y = grid.axes()
    gen = contourpy.contour_generator(x, y, c.T, line_type=contourpy.LineType.Separate)
    lines = gen.lines(0.0)
    if not lines:
        raise NoCrossing("c does not cross zero")
    if len(lines) != 1:
        raise MultipleComponents(f"found {len(lines)} contour lines")
    p = lines[0]
    area = 0.5 * abs(np.sum(p[:-1, 0] * p[1:, 1] - p[1:, 0] * p[:-1, 1]))
    return float(np.sqrt(area / np.pi))


# ----------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------

def save_snapshot(path, state, params=None, extra=None):
    """Write fields plus JSON metadata (shape, grid, parameters) to an ``.npz`` container."""
    meta = {"t": state.t, "step": state.step, "shape": list(state.c.shape),
            "dtype": str(state.c.dtype)}
    if params is not None:
        meta["params"] = params.as_dict()
    if extra:
        meta.update(extra)
    np.savez(path, c=state.c, p=state.p, vx=state.v[0], vy=state.v[1],
             meta=np.array(json.dumps(meta, sort_keys=True)))


def load_snapshot(path):
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        st = SimState((data["vx"], data["vy"]), data["p"], data["c"], meta["t"], meta["step"])
    return st, meta


DIAG_HEADER = "t,E_kin,E_int,E_total,dissipation,div_max,radius"


def diagnostics_row(state, params):
    e = energy(state, params)
    div = float(np.max(np.abs(divergence(state, params))))
    try:
        r = level_set_radius(state, params.grid)
    except (NoCrossing, MultipleComponents):
        r = float("nan")
    return [state.t, e.kinetic, e.interfacial, e.total, e.dissipation_rate, div, r]


def write_diagnostics(path, rows):
    np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",", header=DIAG_HEADER,
               comments="", fmt="%.17g")
