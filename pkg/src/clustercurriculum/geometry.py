"""Sphere-packing geometry of a Gaussian cluster and its percolation curve.

A fitted Gaussian ``N(mu, Sigma)`` defines nested confidence ellipsoids
``(x - mu)^T Sigma^{-1} (x - mu) <= chi^2``.  The number of radius-``eps``
spheres that fit in the ellipsoid of Mahalanobis radius ``chi`` is the
volume quotient ``(chi / eps)^d sqrt(det Sigma)``.  Growing an inner
ellipsoid inside the outermost one, the data count ``n(A)`` in the
remaining annulus collapses abruptly in high dimension while the packing
count ``N(A)`` barely moves; the steepest step of ``n(A)`` marks the
critical point.

Every count is handled as a natural logarithm: ``(chi/eps)^d`` overflows a
double long before ``d = 512``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_real
from .exceptions import InvalidParameterError, RankDeficiencyError
from .features import FeatureSet

__all__ = [
    "EllipsoidSummary",
    "PercolationCurve",
    "PercolationAnalysis",
    "fit_ellipsoid",
    "mahalanobis_norm",
    "packing_count_log",
    "annulus_count_log",
    "packing_ratio",
    "solve_epsilon",
    "percolation_curve",
    "critical_point",
    "ellipsoid_volume_log",
    "log1mexp",
]

_CHUNK_VALUES = 1 << 23


@dataclass(frozen=True)
class EllipsoidSummary:
    """Mean, covariance and eigen-structure of a fitted cluster.

    ``eigenvalues`` are descending and ``eigenvectors[:, i]`` pairs with
    ``eigenvalues[i]``.  ``chi_alpha1`` is the largest Mahalanobis norm of
    the fitted data (``nan`` when built from a bare covariance).
    """

    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    log_sqrt_det: float
    chi_alpha1: float
    n_points: int = 0
    ridge: float = 0.0

    @property
    def d(self):
        return self.mean.shape[0]

    @classmethod
    def from_covariance(cls, mean, covariance, chi_alpha1=float("nan"), n_points=0):
        mean = np.asarray(mean, dtype=np.float64).ravel()
        cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise InvalidParameterError(f"covariance shape {cov.shape} does not match mean")
        evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
        evals, evecs = evals[::-1], evecs[:, ::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            lsd = 0.5 * float(np.sum(np.log(evals))) if np.all(evals > 0) else float("nan")
        return cls(mean, cov, evals, evecs, lsd, float(chi_alpha1), n_points)

    def require_full_rank(self):
        bad = int(np.sum(~(self.eigenvalues > 0)))
        if bad:
            raise RankDeficiencyError(
                f"covariance has {bad} zero eigenvalue(s); Mahalanobis geometry needs full rank",
                null_dims=bad,
            )

    def epsilon(self, n):
        return solve_epsilon(self, n)


def _points(X):
    if isinstance(X, FeatureSet):
        return X.points
    return FeatureSet(X).points


def _norms(X, mean, evecs, evals):
    m, d = X.shape
    scale = evecs / np.sqrt(evals)[None, :]
    out = np.empty(m, dtype=np.float64)
    step = max(1, _CHUNK_VALUES // d)
    for a in range(0, m, step):
        Z = (X[a:a + step].astype(np.float64) - mean) @ scale
        out[a:a + step] = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    return out


def _fit(X, ridge, ddof, rank_tol):
    m, d = X.shape
    ridge = check_real(ridge, "ridge", low=0.0)
    if m - ddof <= 0:
        raise InvalidParameterError(f"need more than ddof={ddof} points, got {m}")
    mean = X.mean(axis=0, dtype=np.float64)
    scatter = np.zeros((d, d))
    step = max(1, _CHUNK_VALUES // d)
    for a in range(0, m, step):
        Z = X[a:a + step].astype(np.float64) - mean
        scatter += Z.T @ Z
    cov = scatter / (m - ddof)
    cov = 0.5 * (cov + cov.T)
    if ridge:
        cov[np.diag_indices(d)] += ridge
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1].copy(), evecs[:, ::-1].copy()
    if rank_tol is None:
        rank_tol = max(float(evals[0]), 0.0) * max(m, d) * np.finfo(np.float64).eps
    null = evals <= rank_tol
    if null.any():
        k = int(null.sum())
        dims = ", ".join(str(i) for i in np.flatnonzero(null)[:10])
        raise RankDeficiencyError(
            f"covariance is rank deficient: {k} of {d} eigenvalues <= {rank_tol:.3g} "
            f"(eigen-directions {dims}{', ...' if k > 10 else ''}); pass a ridge to regularise",
            null_dims=k,
        )
    lsd = 0.5 * float(np.sum(np.log(evals)))
    norms = _norms(X, mean, evecs, evals)
    summary = EllipsoidSummary(mean, cov, evals, evecs, lsd, float(norms.max()), m, ridge)
    return summary, norms


def fit_ellipsoid(X, ridge=0.0, *, ddof=1, rank_tol=None):
    """Fit the confidence-ellipsoid geometry of ``X`` (rows are points).

    The covariance is taken about the sample mean with ``m - ddof``
    normalisation, plus ``ridge * I`` if requested.  Eigenvalues at or below
    ``rank_tol`` (default ``lambda_max * max(m, d) * eps``) raise
    :class:`RankDeficiencyError`.
    """
    summary, _ = _fit(_points(X), ridge, ddof, rank_tol)
    return summary


def mahalanobis_norm(x, summary):
    """``sqrt((x - mu)^T Sigma^{-1} (x - mu))`` for a vector or a row matrix."""
    summary.require_full_rank()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(_norms(x[None, :], summary.mean, summary.eigenvectors, summary.eigenvalues)[0])
    return _norms(x, summary.mean, summary.eigenvectors, summary.eigenvalues)


def log1mexp(t):
    """``log(1 - exp(t))`` for ``t <= 0``, accurate on both sides of ``-ln 2``."""
    if t > -math.log(2.0):
        return math.log(-math.expm1(t))
    return math.log1p(-math.exp(t))


def _log_ratio(chi2, chi1):
    """``ln(chi2 / chi1)`` without cancellation when the radii are close."""
    if chi2 > 0.5 * chi1:
        return math.log1p((chi2 - chi1) / chi1)
    return math.log(chi2) - math.log(chi1)


def packing_count_log(chi, epsilon, d, log_sqrt_det):
    """``ln N`` for ``N = (chi / eps)^d sqrt(det Sigma)``; ``-inf`` at ``chi = 0``."""
    epsilon = check_real(epsilon, "epsilon", low=0.0, low_open=True)
    chi = check_real(chi, "chi", low=0.0)
    d = check_int(d, "d", min_value=1)
    if chi == 0.0:
        return -math.inf
    return d * (math.log(chi) - math.log(epsilon)) + float(log_sqrt_det)


def annulus_count_log(chi1, chi2, epsilon, d, log_sqrt_det):
    """``ln N(A)`` for the annulus between Mahalanobis radii ``chi2 <= chi1``."""
    chi1 = check_real(chi1, "chi1", low=0.0)
    chi2 = check_real(chi2, "chi2", low=0.0)
    if chi2 > chi1:
        raise InvalidParameterError(f"inner radius chi2={chi2} exceeds outer chi1={chi1}")
    outer = packing_count_log(chi1, epsilon, d, log_sqrt_det)
    if chi2 == chi1:
        return -math.inf
    if chi2 == 0.0:
        return outer
    return outer + log1mexp(d * _log_ratio(chi2, chi1))


def packing_ratio(chi1, chi2, d):
    """``N(A) / N(E_outer) = 1 - (chi2 / chi1)^d``; free of ``eps`` and ``Sigma``."""
    chi1 = check_real(chi1, "chi1", low=0.0, low_open=True)
    chi2 = check_real(chi2, "chi2", low=0.0)
    d = check_int(d, "d", min_value=1)
    if chi2 > chi1:
        raise InvalidParameterError(f"inner radius chi2={chi2} exceeds outer chi1={chi1}")
    if chi2 == 0.0:
        return 1.0
    return -math.expm1(d * _log_ratio(chi2, chi1))


def epsilon_for_count(chi_alpha1, n, d, log_sqrt_det):
    """Sphere radius making the packing count at ``chi_alpha1`` equal ``n``."""
    chi_alpha1 = check_real(chi_alpha1, "chi_alpha1", low=0.0, low_open=True)
    n = check_int(n, "n", min_value=1)
    d = check_int(d, "d", min_value=1)
    return math.exp(math.log(chi_alpha1) + (float(log_sqrt_det) - math.log(n)) / d)


def solve_epsilon(summary, n):
    """Oracle radius: the ``eps`` at which ``N(E_alpha1) = n``."""
    summary.require_full_rank()
    return epsilon_for_count(summary.chi_alpha1, n, summary.d, summary.log_sqrt_det)


def ellipsoid_volume_log(chi, d, log_sqrt_det):
    """``ln Vol`` of ``{x : x^T Sigma^{-1} x <= chi^2}`` in ``d`` dimensions."""
    chi = check_real(chi, "chi", low=0.0)
    d = check_int(d, "d", min_value=1)
    if chi == 0.0:
        return -math.inf
    return (math.log(2.0 / d) + 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d))
            + d * math.log(chi) + float(log_sqrt_det))


def critical_point(values):
    """Left index of the largest absolute step ``|v[i+1] - v[i]|`` (first on ties)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise InvalidParameterError("critical_point needs at least two values")
    return int(np.argmax(np.abs(np.diff(v))))


@dataclass(frozen=True)
class PercolationCurve:
    chi_grid: np.ndarray
    n_annulus: np.ndarray
    log_n_packing: np.ndarray
    critical_index: int
    epsilon: float
    chi_alpha1: float

    @property
    def critical_chi(self):
        return float(self.chi_grid[self.critical_index])

    @property
    def n_packing(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_n_packing)

    def drop_window(self, high=0.9, low=0.1):
        """Width, as a fraction of ``chi_alpha1``, over which ``n(A)`` falls
        from ``high * m`` to ``low * m`` (linear interpolation on the grid)."""
        m = float(self.n_annulus[0])
        x = self.chi_grid[::-1]
        y = self.n_annulus[::-1].astype(np.float64)
        chi_high = np.interp(high * m, y, x)
        chi_low = np.interp(low * m, y, x)
        return float((chi_low - chi_high) / self.chi_alpha1)

    def to_dict(self):
        return {
            "chi_grid": [float(c) for c in self.chi_grid],
            "chi_alpha1": float(self.chi_alpha1),
            "epsilon": float(self.epsilon),
            "n_annulus": [int(n) for n in self.n_annulus],
            "log_n_packing": [float(v) if np.isfinite(v) else None for v in self.log_n_packing],
            "critical_index": int(self.critical_index),
            "critical_chi": self.critical_chi,
        }


def _curve(summary, norms, grid_size):
    m = norms.shape[0]
    eps = solve_epsilon(summary, m)
    chi1 = summary.chi_alpha1
    grid = np.linspace(0.0, chi1, grid_size)
    grid[-1] = chi1
    sorted_norms = np.sort(norms)
    n_annulus = m - np.searchsorted(sorted_norms, grid, side="right")
    log_np = np.array([annulus_count_log(chi1, g, eps, summary.d, summary.log_sqrt_det)
                       for g in grid])
    return PercolationCurve(grid, n_annulus.astype(np.int64), log_np,
                            critical_point(n_annulus), eps, chi1)


def percolation_curve(X, grid_size=200, ridge=0.0):
    """Annulus data counts ``n(A)`` and packing counts ``N(A)`` on a uniform
    grid of inner radii in ``[0, chi_alpha1]``, with ``eps`` calibrated so
    that ``N = m`` on the outermost ellipsoid."""
    grid_size = check_int(grid_size, "grid_size", min_value=3)
    summary, norms = _fit(_points(X), ridge, 1, None)
    if not summary.chi_alpha1 > 0:
        raise RankDeficiencyError("all points sit at the mean", null_dims=summary.d)
    return _curve(summary, norms, grid_size)


class PercolationAnalysis(TransformerMixin, BaseEstimator):
    """Fit the ellipsoid geometry of a cluster and its percolation curve.

    ``transform`` maps points to their Mahalanobis norm under the fitted
    Gaussian, as a single-column matrix.

    Attributes
    ----------
    ellipsoid_ : EllipsoidSummary
    curve_ : PercolationCurve
    critical_chi_ : float
    """

    def __init__(self, grid_size=200, ridge=0.0):
        self.grid_size = grid_size
        self.ridge = ridge

    def fit(self, X, y=None):
        points = _points(X)
        grid_size = check_int(self.grid_size, "grid_size", min_value=3)
        self.ellipsoid_, norms = _fit(points, self.ridge, 1, None)
        if not self.ellipsoid_.chi_alpha1 > 0:
            raise RankDeficiencyError("all points sit at the mean", null_dims=points.shape[1])
        self.curve_ = _curve(self.ellipsoid_, norms, grid_size)
        self.critical_chi_ = self.curve_.critical_chi
        self.n_features_in_ = points.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "ellipsoid_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise InvalidParameterError(
                f"expected {self.n_features_in_} features, got shape {X.shape}")
        return mahalanobis_norm(X, self.ellipsoid_)[:, None]
