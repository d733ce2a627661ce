"""Convergence-rate fitting and interface comparison."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import NonPositiveError, OutsideTube
from .geometry import TubularMap


@dataclass(frozen=True)
class RateReport:
    """Least-squares fit ``log e = p log eps + b``.

    ``band`` is the half-width of the 95% confidence interval of ``p``
    (zero for exact data or two points).
    """

    eps: np.ndarray
    errors: np.ndarray
    order: float
    intercept: float
    r2: float
    band: float
    residual: float
    threshold: float = None
    passed: bool = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(eps=list(map(float, self.eps)), errors=list(map(float, self.errors)),
                    order=self.order, intercept=self.intercept, r2=self.r2, band=self.band,
                    residual=self.residual, threshold=self.threshold, passed=self.passed,
                    **self.extra)


def fit_rate(eps, errors, threshold=None):
    """Fit the observed order of ``errors`` against ``eps``.

    Raises
    ------
    NonPositiveError
        If an error is zero, negative or not finite.
    ValueError
        With fewer than three points.
    """
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if eps.shape != errors.shape or eps.ndim != 1:
        raise ValueError("eps and errors must be 1D arrays of equal length")
    if eps.size < 3:
        raise ValueError("a rate fit needs at least three points")
    if np.any(~np.isfinite(errors)) or np.any(errors <= 0):
        raise NonPositiveError("errors must be strictly positive and finite")
    if np.any(eps <= 0):
        raise NonPositiveError("eps must be strictly positive")
    x, y = np.log(eps), np.log(errors)
    fit = stats.linregress(x, y)
    pred = fit.intercept + fit.slope * x
    res = float(np.sqrt(np.mean((y - pred) ** 2)))
    dof = x.size - 2
    band = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else 0.0
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else float(1.0 - np.sum((y - pred) ** 2) / ss_tot)
    passed = None if threshold is None else bool(fit.slope >= threshold)
    return RateReport(eps, errors, float(fit.slope), float(fit.intercept), r2, band, res,
                      threshold, passed)


def _normal_distances(a, b):
    tub = TubularMap(b)
    r, _ = tub.project(a.nodes)
    return r


def compare_interfaces(a, b):
    """``(hausdorff, L2 normal distance)`` between two closed curves.

    Distances come from the normal projection of each curve's nodes onto
    the other; the L2 value is the arclength-weighted RMS of the distances
    of ``a``'s nodes.  If a projection leaves the tube, the symmetric
    point-cloud Hausdorff distance of dense samplings is used instead.
    """
    try:
        rab = _normal_distances(a, b)
        rba = _normal_distances(b, a)
    except OutsideTube:
        from scipy.spatial import cKDTree

        _, pa = a.polygon()
        _, pb = b.polygon()
        da = cKDTree(pb).query(pa)[0]
        db = cKDTree(pa).query(pb)[0]
        return float(max(da.max(), db.max())), float(np.sqrt(np.mean(da**2)))
    sp = np.linalg.norm(a.nodal_derivative(1), axis=1)
    l2 = float(np.sqrt(np.sum(sp * rab**2) / np.sum(sp)))
    return float(max(np.max(np.abs(rab)), np.max(np.abs(rba)))), l2
