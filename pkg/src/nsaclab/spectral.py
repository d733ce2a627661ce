"""Linearized Allen-Cahn operator: lowest eigenvalue and fiber decomposition.

The operator is ``L = -Lap + V`` with ``V = f''(c_A)/eps^2`` on a uniform
grid.  Two Laplacians are available:

* ``"fd2"``: second-order stencil (periodic or homogeneous Neumann), stored
  as a sparse matrix.  Its quadratic form is assembled edge by edge so that
  ``h^d psi^T L psi`` equals the discrete ``int |grad psi|^2 + V psi^2``.
* ``"spectral"``: periodic Fourier Laplacian, applied matrix-free.  The
  ``fd2`` translation mode carries an eigenvalue error of order
  ``(h/eps)^2 / eps^2``; the spectral stencil removes it on layer-resolving
  grids.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, lobpcg, splu

from .errors import NonConvergence
from .profile import DoubleWell


def _second_difference(n, h, boundary):
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    if boundary == "periodic":
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
    else:
        D[0, 0] = -1.0
        D[n - 1, n - 1] = -1.0
    return D.tocsr() / h**2


@dataclass
class LinearizedOperator:
    """``-Lap + V`` on a 1D or 2D uniform grid.

    Parameters
    ----------
    potential : ndarray
        ``V`` sampled at the nodes (its shape fixes the grid shape).
    spacing : tuple of float
        Grid steps per axis.
    boundary : {"periodic", "neumann"}
    eps : float, optional
        Interface width, used by :func:`quadratic_form`.
    stencil : {"fd2", "spectral"}
    """

    potential: np.ndarray
    spacing: tuple
    boundary: str = "periodic"
    eps: float = None
    stencil: str = "fd2"
    _matrix: object = field(default=None, repr=False)
    _k2: object = field(default=None, repr=False)

    def __post_init__(self):
        self.potential = np.asarray(self.potential, dtype=float)
        self.spacing = tuple(float(h) for h in np.atleast_1d(self.spacing))
        if len(self.spacing) != self.potential.ndim:
            raise ValueError("one spacing per grid axis is required")
        if self.boundary not in ("periodic", "neumann"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.stencil not in ("fd2", "spectral"):
            raise ValueError(f"unknown stencil {self.stencil!r}")
        if self.stencil == "spectral":
            if self.boundary != "periodic":
                raise ValueError("the spectral stencil needs a periodic grid")
            ks = [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.shape, self.spacing)]
            ks[-1] = 2.0 * np.pi * np.fft.rfftfreq(self.shape[-1], d=self.spacing[-1])
            grids = np.meshgrid(*ks, indexing="ij")
            self._k2 = sum(k**2 for k in grids)
            self._kodd = []
            for ax, k in enumerate(grids):
                k = k.copy()
                n = self.shape[ax]
                if n % 2 == 0:
                    idx = [slice(None)] * k.ndim
                    idx[ax] = n // 2 if ax < k.ndim - 1 else -1
                    k[tuple(idx)] = 0.0
                self._kodd.append(k)

    @classmethod
    def from_field(cls, grid, c, eps, well=None, stencil="fd2"):
        """Linearization at ``c`` on a :class:`~nsaclab.diffuse.Grid`."""
        well = well or DoubleWell.standard()
        return cls(well.d2f(np.asarray(c, dtype=float)) / eps**2, (grid.hx, grid.hy),
                   "periodic" if grid.periodic else "neumann", eps, stencil)

    @classmethod
    def line(cls, rho, potential, boundary="neumann"):
        rho = np.asarray(rho, dtype=float)
        return cls(np.asarray(potential, dtype=float), (rho[1] - rho[0],), boundary)

    @property
    def shape(self):
        return self.potential.shape

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def _neg_lap(self, psi):
        F = np.fft.rfftn(psi)
        return np.fft.irfftn(self._k2 * F, s=psi.shape, axes=range(psi.ndim))

    @property
    def matrix(self):
        if self.stencil == "spectral":
            raise ValueError("the spectral operator is matrix-free; use apply or as_linear_operator")
        if self._matrix is None:
            dims = self.shape
            L = None
            for ax, (n, h) in enumerate(zip(dims, self.spacing)):
                D = _second_difference(n, h, self.boundary)
                term = D
                for other in range(len(dims)):
                    if other == ax:
                        continue
                    eye = sp.identity(dims[other], format="csr")
                    term = sp.kron(term, eye) if other > ax else sp.kron(eye, term)
                L = -term if L is None else L - term
            self._matrix = (L + sp.diags(self.potential.ravel())).tocsr()
        return self._matrix

    def apply(self, psi):
        psi = np.asarray(psi, dtype=float)
        if self.stencil == "spectral":
            psi = psi.reshape(self.shape)
            return self._neg_lap(psi) + self.potential * psi
        return (self.matrix @ psi.ravel()).reshape(psi.shape)

    def as_linear_operator(self, counter=None):
        n = self.size

        def mv(x):
            if counter is not None:
                counter[0] += x.shape[1] if x.ndim == 2 else 1
            x = np.asarray(x)
            if x.ndim == 2:
                return np.column_stack([self.apply(col.reshape(self.shape)).ravel() for col in x.T])
            return self.apply(x.reshape(self.shape)).ravel()

        return LinearOperator((n, n), matvec=mv, matmat=mv, dtype=float)

    def spectral_bound(self):
        """Upper bound of ``|L|`` used to scale residuals."""
        if self.stencil == "spectral":
            lap = float(np.max(self._k2))
        else:
            lap = 4.0 * sum(1.0 / h**2 for h in self.spacing)
        return float(np.max(np.abs(self.potential)) + lap)

    def _edge_terms(self, psi, phi, mask):
        total = 0.0
        if self.stencil == "spectral":
            if mask is None:
                return float(np.sum(psi * self._neg_lap(phi)))
            Fp, Fq = np.fft.rfftn(psi), np.fft.rfftn(phi)
            for k in self._kodd:
                gp = np.fft.irfftn(1j * k * Fp, s=psi.shape, axes=range(psi.ndim))
                gq = np.fft.irfftn(1j * k * Fq, s=psi.shape, axes=range(psi.ndim))
                total += float(np.sum((gp * gq)[mask]))
            return total
        for ax, h in enumerate(self.spacing):
            if self.boundary == "periodic":
                dpsi = (np.roll(psi, -1, axis=ax) - psi) / h
                dphi = (np.roll(phi, -1, axis=ax) - phi) / h
                em = None if mask is None else (mask & np.roll(mask, -1, axis=ax))
            else:
                sl0 = [slice(None)] * psi.ndim
                sl1 = [slice(None)] * psi.ndim
                sl0[ax] = slice(0, -1)
                sl1[ax] = slice(1, None)
                dpsi = (psi[tuple(sl1)] - psi[tuple(sl0)]) / h
                dphi = (phi[tuple(sl1)] - phi[tuple(sl0)]) / h
                em = None if mask is None else (mask[tuple(sl0)] & mask[tuple(sl1)])
            prod = dpsi * dphi
            total += float(np.sum(prod if em is None else prod[em]))
        return total

    def bilinear(self, psi, phi=None, mask=None):
        """``int grad psi . grad phi + V psi phi`` (edges and nodes restricted to ``mask``)."""
        psi = np.asarray(psi, dtype=float)
        phi = psi if phi is None else np.asarray(phi, dtype=float)
        grad = self._edge_terms(psi, phi, mask)
        pot = self.potential * psi * phi
        pot = float(np.sum(pot if mask is None else pot[mask]))
        return self.cell_volume * (grad + pot)

    def norm2(self, psi, mask=None):
        psi = np.asarray(psi, dtype=float)
        return self.cell_volume * float(np.sum(psi**2 if mask is None else psi[mask] ** 2))


@dataclass(frozen=True)
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float
    method: str


def _lobpcg_min(op, tol, maxiter, count):
    """LOBPCG with the preconditioner ``(-Lap + max V)^-1`` (FFT diagonal)."""
    shift = max(float(np.max(op.potential)), 1.0)
    denom = op._k2 + shift

    def prec(x):
        x = np.asarray(x)
        cols = x if x.ndim == 2 else x[:, None]
        out = np.column_stack([np.fft.irfftn(np.fft.rfftn(c.reshape(op.shape)) / denom, s=op.shape, axes=range(len(op.shape))).ravel()
                               for c in cols.T])
        return out if x.ndim == 2 else out[:, 0]

    n = op.size
    M = LinearOperator((n, n), matvec=prec, matmat=prec, dtype=float)
    # start from the region of negative potential, where the lowest modes
    # live, modulated by the coordinates (translation-like modes)
    rng = np.random.Generator(np.random.Philox(key=0))
    g = np.clip(-op.potential, 0.0, None)
    if not np.any(g > 0):
        g = np.ones(op.shape)
    cols = [g.ravel()]
    for ax in range(g.ndim):
        idx = np.arange(g.shape[ax], dtype=float)
        shape = [1] * g.ndim
        shape[ax] = -1
        coord = idx.reshape(shape) * np.ones(g.shape)
        mean = np.sum(coord * g) / max(np.sum(g), 1e-300)
        cols.append((g * (coord - mean)).ravel())
    X = np.column_stack(cols)
    X = X + 1e-3 * np.max(np.abs(X)) * rng.standard_normal(X.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals, vecs = lobpcg(op.as_linear_operator(count), X, M=M, largest=False,
                            tol=tol * op.spectral_bound() * 1e-2, maxiter=maxiter or 2000)
    j = int(np.argmin(vals))
    return float(vals[j]), vecs[:, j]


def min_eigenvalue(op, tol=1e-8, maxiter=None, method="auto"):
    """Smallest eigenpair of ``op``.

    ``fd2`` operators: Lanczos on the smallest-algebraic end first; if it
    does not converge, shift-invert about a shift below ``min V`` (a strict
    lower bound of the spectrum).  ``spectral`` operators: preconditioned
    LOBPCG, then plain Lanczos.  The returned vector has unit discrete L2
    norm and a nonnegative sum.

    Raises
    ------
    NonConvergence
        If the relative residual ``|L psi - lam psi| / |L|`` exceeds ``tol``.
    """
    n = op.size
    count = [0]
    scale = op.spectral_bound()
    lam = vec = None
    used = None

    def residual(lam, vec):
        v = vec / np.linalg.norm(vec)
        return float(np.linalg.norm(op.apply(v.reshape(op.shape)).ravel() - lam * v) / scale)

    if op.stencil == "spectral" and method in ("auto", "lobpcg"):
        lam, vec = _lobpcg_min(op, tol, maxiter, count)
        used = "lobpcg"
        if residual(lam, vec) > tol:
            lam = vec = None
    if lam is None and method in ("auto", "lanczos", "lobpcg"):
        try:
            vals, vecs = eigsh(op.as_linear_operator(count), k=1, which="SA", tol=tol * 1e-2,
                               maxiter=maxiter or min(20 * n, 3000))
            lam, vec, used = float(vals[0]), vecs[:, 0], "lanczos"
        except ArpackNoConvergence:
            if method == "lanczos" or op.stencil == "spectral":
                raise NonConvergence("Lanczos did not converge")
    if lam is None:
        A = op.matrix
        sigma = float(np.min(op.potential)) - 1.0
        lu = splu((A - sigma * sp.identity(n, format="csr")).tocsc())

        def inv(x):
            count[0] += 1
            return lu.solve(x)

        Op = LinearOperator((n, n), matvec=inv, dtype=float)
        try:
            vals, vecs = eigsh(Op, k=1, which="LA", tol=tol * 1e-2, maxiter=maxiter or 1000)
        except ArpackNoConvergence as exc:
            raise NonConvergence("shift-invert Lanczos did not converge") from exc
        lam, vec, used = float(sigma + 1.0 / vals[0]), vecs[:, 0], "shift-invert"
    vec = vec / np.sqrt(op.cell_volume * np.sum(vec**2))
    if np.sum(vec) < 0:
        vec = -vec
    res = residual(lam, vec)
    if res > tol:
        raise NonConvergence(f"eigen residual {res:.2e} above tolerance {tol:.1e}")
    return EigenResult(lam, vec.reshape(op.shape), count[0], res, used)


def quadratic_form(op, psi, mask=None):
    """``Lambda = int eps |grad psi|^2 + eps^-1 f''(c_A) psi^2`` over ``mask``.

    Uses the stencil of :attr:`LinearizedOperator.matrix`, so on the full
    grid ``Lambda = eps h^d psi^T L psi``.
    """
    if op.eps is None:
        raise ValueError("operator has no eps")
    return op.eps * op.bilinear(psi, mask=mask)


def tube_mask(tub, grid, delta=None):
    """Grid nodes with ``|d| < delta`` (default: the tube's delta)."""
    delta = tub.delta if delta is None else delta
    d = tub.signed_distance(grid.points())
    return np.abs(d) < delta


def tangential_energy(psi, grid, tub, mask):
    """``int_mask |tau . grad psi|^2`` with centered differences."""
    psi = np.asarray(psi, dtype=float)
    if grid.periodic:
        gx = (np.roll(psi, -1, 0) - np.roll(psi, 1, 0)) / (2 * grid.hx)
        gy = (np.roll(psi, -1, 1) - np.roll(psi, 1, 1)) / (2 * grid.hy)
    else:
        gx, gy = np.gradient(psi, grid.hx, grid.hy)
    pts = grid.points()[mask]
    _, s = tub.project(pts)
    tau, _ = tub.interface.tangent_normal(s)
    gt = tau[:, 0] * gx[mask] + tau[:, 1] * gy[mask]
    return grid.cell_area * float(np.sum(gt**2))


# ----------------------------------------------------------------------------
# fiber decomposition
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberGrid:
    """Quadrature on ``{X0(s) + eps (rho + h(s)) n(s)}`` with ``rho`` in ``I_eps(s)``.

    ``s`` is uniform (periodic trapezoid); ``rho`` uses Gauss-Legendre
    nodes on ``(-delta/eps - h, delta/eps - h)``.
    """

    tub: object
    eps: float
    h: np.ndarray
    s: np.ndarray
    rho: np.ndarray
    weights: np.ndarray
    J: np.ndarray
    speed: np.ndarray

    @classmethod
    def build(cls, tub, eps, h_eps=None, n_s=256, n_rho=160):
        s = np.arange(n_s) / n_s
        if h_eps is None:
            h = np.zeros(n_s)
        elif callable(h_eps):
            h = np.asarray(h_eps(s), dtype=float) * np.ones(n_s)
        else:
            h = np.broadcast_to(np.asarray(h_eps, dtype=float), (n_s,)).copy()
        delta = tub.delta
        x, w = np.polynomial.legendre.leggauss(n_rho)
        a = delta / eps
        rho = a * x[None, :] - h[:, None]
        wr = a * w[None, :] * np.ones((n_s, 1))
        r = eps * (rho + h[:, None])
        J = 1.0 - r * tub.interface.curvature(s)[:, None]
        speed = tub.interface.speed(s)
        return cls(tub, float(eps), h, s, rho, wr, J, speed)

    @property
    def shape(self):
        return self.rho.shape

    def points(self):
        r = self.eps * (self.rho + self.h[:, None])
        return self.tub.point(r, np.broadcast_to(self.s[:, None], r.shape))

    def measure(self):
        """Area weights: ``ds |X0'| * eps d rho * J``."""
        return (self.speed / self.s.size)[:, None] * self.eps * self.weights * self.J

    def norm2(self, values):
        return float(np.sum(self.measure() * values**2))


@dataclass(frozen=True)
class FiberDecomposition:
    Z: np.ndarray
    beta: np.ndarray
    projection: np.ndarray
    remainder: np.ndarray
    psi: np.ndarray
    fibers: FiberGrid
    tail_mass: np.ndarray
    weight_defect: np.ndarray

    @property
    def norm2(self):
        return self.fibers.norm2(self.psi)

    @property
    def remainder_fraction(self):
        n = self.norm2
        return 0.0 if n == 0 else float(np.sqrt(self.fibers.norm2(self.remainder) / n))

    def pythagoras_defect(self):
        """``| |psi|^2 - |P psi|^2 - |R psi|^2 | / |psi|^2``."""
        f = self.fibers
        n = self.norm2
        return abs(n - f.norm2(self.projection) - f.norm2(self.remainder)) / max(n, 1e-300)


def _sample(psi, fibers, grid):
    if callable(psi):
        return np.asarray(psi(fibers.points()), dtype=float)
    psi = np.asarray(psi, dtype=float)
    if psi.shape == fibers.shape:
        return psi
    if grid is None:
        raise ValueError("a grid is needed to interpolate a field")
    x, y = grid.axes()
    if grid.periodic:
        # wrap two layers so the spline sees the periodic continuation
        px = np.concatenate([x[-2:] - grid.Lx, x, x[:2] + grid.Lx])
        py = np.concatenate([y[-2:] - grid.Ly, y, y[:2] + grid.Ly])
        psi = np.pad(psi, 2, mode="wrap")
        x, y = px, py
    spl = RectBivariateSpline(x, y, psi, kx=3, ky=3)
    pts = fibers.points()
    return spl.ev(pts[..., 0], pts[..., 1])


def fiber_decompose(psi, tub, p, eps, h_eps=None, grid=None, fibers=None, n_s=256, n_rho=160):
    """Fiberwise projection of ``psi`` onto ``theta0'(rho)``.

    ``Z(s)`` is scaled so that ``eps^-1/2 Z(s) beta(s) theta0'(rho)`` is the
    orthogonal projection in ``L^2(I_eps, J d rho)`` on each fiber, with
    ``beta(s) = (int_I theta0'^2 d rho)^-1/2``.  ``psi`` is a callable of
    ``x``, a grid field (with ``grid``) or samples on ``fibers``.
    """
    if fibers is None:
        fibers = FiberGrid.build(tub, eps, h_eps, n_s, n_rho)
    if eps > tub.delta / 4:
        warnings.warn("eps exceeds delta/4: fibers truncate the layer", RuntimeWarning, stacklevel=2)
    vals = _sample(psi, fibers, grid)
    t1 = p(fibers.rho, 1)
    w = fibers.weights
    J = fibers.J
    a_plain = np.sum(w * t1**2, axis=1)
    a_J = np.sum(w * J * t1**2, axis=1)
    beta = a_plain**-0.5
    coef = np.sum(w * J * vals * t1, axis=1) / a_J
    Z = np.sqrt(eps) * coef / beta
    proj = coef[:, None] * t1
    sigma_line = float(np.trapezoid(p(p.rho, 1) ** 2, p.rho))
    return FiberDecomposition(Z, beta, proj, vals - proj, vals, fibers,
                              tail_mass=1.0 - a_plain / sigma_line,
                              weight_defect=beta**2 * a_J - 1.0)


# ----------------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------------

def write_sweep(path, rows):
    """CSV with columns ``eps,lambda_min,iterations,residual``."""
    np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",",
               header="eps,lambda_min,iterations,residual", comments="", fmt="%.17g")
