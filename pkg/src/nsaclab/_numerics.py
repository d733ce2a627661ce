"""Small numerical helpers shared by several modules."""

import numpy as np


def fornberg_weights(z, x, m):
    """Finite-difference weights for derivatives 0..m at ``z`` on nodes ``x``.

    Returns an array ``c`` of shape (len(x), m + 1) with ``c[:, k]`` the
    weights of the k-th derivative (Fornberg 1988).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def centered_weights(deriv, accuracy, step=1.0):
    """Centered stencil offsets and weights for ``deriv`` at given accuracy."""
    half = (deriv + 1) // 2 - 1 + accuracy // 2
    offsets = np.arange(-half, half + 1)
    w = fornberg_weights(0.0, offsets * step, deriv)[:, deriv]
    return offsets, w


def fd_derivative(values, h, deriv=1, accuracy=6):
    """Derivative of uniformly sampled data along the last axis.

    Centered stencils in the interior, one-sided stencils of the same width
    near the ends.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[-1]
    offsets, w = centered_weights(deriv, accuracy)
    half = offsets[-1]
    width = 2 * half + 1
    if n < width + 1:
        raise ValueError("too few samples for the requested stencil")
    out = np.zeros_like(v)
    for o, wk in zip(offsets, w):
        out[..., half:n - half] += wk * v[..., half + o:n - half + o]
    for i in list(range(half)) + list(range(n - half, n)):
        lo = min(max(i - half, 0), n - width - 1)
        idx = np.arange(lo, lo + width + 1)
        wk = fornberg_weights(float(i), idx.astype(float), deriv)[:, deriv]
        out[..., i] = v[..., idx] @ wk
    return out / h**deriv


def trapezoid_uniform(values, h, axis=-1):
    """Trapezoidal rule on a uniform grid.

    Spectrally accurate for smooth integrands that decay at both ends.
    """
    v = np.asarray(values, dtype=float)
    v = np.moveaxis(v, axis, -1)
    return h * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


def fourier_wavenumbers(n, length=1.0):
    """Angular wavenumbers for an n-point periodic grid (numpy FFT order)."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


def periodic_derivative(values, deriv=1, length=1.0, axis=0):
    """Spectral derivative of periodic samples along ``axis``.

    The Nyquist mode is dropped for odd derivative orders so that the
    discrete operator stays real and skew-symmetric.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[axis]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    mult = (1j * k) ** deriv
    if n % 2 == 0 and deriv % 2 == 1:
        mult[-1] = 0.0
    shape = [1] * v.ndim
    shape[axis] = len(k)
    vh = np.fft.rfft(v, axis=axis) * mult.reshape(shape)
    return np.fft.irfft(vh, n=n, axis=axis)


def periodic_interp(values, s, deriv=0, chunk=8192):
    """Evaluate the trigonometric interpolant of samples on s_j = j/n.

    ``values`` has the periodic direction on axis 0; trailing axes are
    carried along.  ``s`` may be any array of parameters.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    coef = np.fft.rfft(v, axis=0) / n
    k = np.arange(coef.shape[0])
    weight = np.full(k.shape, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    coef = coef * (weight * (2j * np.pi * k) ** deriv).reshape((-1,) + (1,) * (v.ndim - 1))
    s = np.asarray(s, dtype=float)
    flat = s.ravel()
    out = np.empty((flat.size,) + v.shape[1:])
    for start in range(0, flat.size, chunk):
        part = flat[start:start + chunk]
        e = np.exp(2j * np.pi * np.outer(part, k))
        out[start:start + chunk] = np.real(np.tensordot(e, coef, axes=(1, 0)))
    return out.reshape(s.shape + v.shape[1:])
