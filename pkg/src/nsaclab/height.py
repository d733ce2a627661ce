"""Periodic functions on the parameter circle with an optional time history."""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ._numerics import periodic_derivative, periodic_interp


@dataclass(frozen=True)
class HeightFunction:
    """Samples ``h(s_j, t_m)`` on ``s_j = j/N`` and increasing times ``t_m``.

    ``values`` has shape (M, N).  Evaluation is trigonometric in ``s`` and
    cubic (linear for two slices, constant for one) in ``t``.
    """

    values: np.ndarray
    times: np.ndarray = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.times is None:
            t = np.zeros(v.shape[0]) if v.shape[0] == 1 else np.arange(v.shape[0], dtype=float)
        else:
            t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if t.shape != (v.shape[0],):
            raise ValueError("one time per row of values is required")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("height function must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)

    @classmethod
    def constant(cls, value, n=64, t=0.0):
        return cls(np.full((1, n), float(value)), np.array([t]))

    @classmethod
    def from_function(cls, fn, n=64, times=(0.0,)):
        """Sample ``fn(s, t)`` on the uniform grid."""
        s = np.arange(n) / n
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return cls(np.array([fn(s, t) for t in times]), times)

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def grid(self):
        return np.arange(self.n) / self.n

    def slice(self, t=None):
        """Nodal values at time ``t`` (last slice when ``t`` is None)."""
        if t is None or self.values.shape[0] == 1:
            return self.values[-1] if t is None else self.values[0]
        return self._time_interp(t, 0)

    def _time_interp(self, t, nu):
        m = self.values.shape[0]
        if m == 1:
            return self.values[0] if nu == 0 else np.zeros(self.n)
        if m == 2:
            dt = self.times[1] - self.times[0]
            slope = (self.values[1] - self.values[0]) / dt
            if nu == 0:
                return self.values[0] + (t - self.times[0]) * slope
            return slope if nu == 1 else np.zeros(self.n)
        return CubicSpline(self.times, self.values, axis=0)(t, nu)

    def __call__(self, s, t=None, ds=0, dt=0):
        """Evaluate ``d^ds/ds^ds d^dt/dt^dt h`` at parameters ``s``."""
        if dt:
            nodal = self._time_interp(self.times[-1] if t is None else t, dt)
        else:
            nodal = self.slice(t)
        return periodic_interp(nodal, s, deriv=ds)

    def nodal_derivative(self, ds=1, t=None):
        return periodic_derivative(self.slice(t), deriv=ds)

    def append(self, t, values):
        return HeightFunction(np.vstack([self.values, values]), np.append(self.times, t))

    def to_csv(self, path):
        s = self.grid
        rows = [np.column_stack([s, np.full_like(s, t), v]) for t, v in zip(self.times, self.values)]
        np.savetxt(path, np.vstack(rows), delimiter=",", header="s,t,h", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times = np.unique(data[:, 1])
        vals = np.array([data[data[:, 1] == t][np.argsort(data[data[:, 1] == t][:, 0]), 2] for t in times])
        return cls(vals, times)
