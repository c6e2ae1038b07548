"""Desk-scale stand-ins for the generative pipeline.

Synthetic Gaussian clusters with uniform outliers replace image feature
sets, closed-form Gaussian (or EM mixture) fits replace GAN training, and
the Frechet distance between fitted Gaussians replaces Inception FID.
Scores are always measured against a held-out sample of the clean cluster
components, never the outliers.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from ._validation import check_int, check_matrix, check_real
from .exceptions import InvalidInputError, InvalidParameterError
from .features import FeatureSet

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ClusterComponent",
    "NoiseComponent",
    "SyntheticSpec",
    "GaussianModelState",
    "GMMState",
    "GaussianTrainer",
    "GMMTrainer",
    "FrechetScore",
    "ExperimentSummary",
    "generate_synthetic",
    "sample_reference",
    "frechet_distance",
    "score_against_reference",
    "vshape_experiment",
    "is_v_shaped",
    "is_monotone_non_increasing",
    "load_spec_file",
    "bundled_spec_path",
]

_DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class ClusterComponent:
    mean: np.ndarray
    covariance: np.ndarray
    count: int


@dataclass(frozen=True)
class NoiseComponent:
    count: int
    low: np.ndarray
    high: np.ndarray


@dataclass(frozen=True)
class SyntheticSpec:
    clusters: tuple
    noise: NoiseComponent = None
    seed: int = 0

    def __post_init__(self):
        if not self.clusters:
            raise InvalidParameterError("a synthetic spec needs at least one cluster")
        d = self.clusters[0].mean.shape[0]
        for c in self.clusters:
            if c.mean.shape != (d,) or c.covariance.shape != (d, d):
                raise InvalidParameterError("cluster means/covariances disagree on dimension")
            check_int(c.count, "cluster count", min_value=1)
            try:
                np.linalg.cholesky(c.covariance)
            except np.linalg.LinAlgError:
                raise InvalidParameterError("cluster covariance is not positive definite") from None
            if not np.allclose(c.covariance, c.covariance.T):
                raise InvalidParameterError("cluster covariance is not symmetric")
        if self.noise is not None:
            n = self.noise
            check_int(n.count, "noise count", min_value=1)
            if n.low.shape != (d,) or n.high.shape != (d,) or np.any(n.low >= n.high):
                raise InvalidParameterError("noise box must satisfy low < high in every dimension")
            for c in self.clusters:
                if np.any(c.mean < n.low) or np.any(c.mean > n.high):
                    raise InvalidParameterError("noise box must enclose every cluster mean")

    @property
    def d(self):
        return self.clusters[0].mean.shape[0]

    @property
    def m(self):
        return sum(c.count for c in self.clusters) + (self.noise.count if self.noise else 0)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {"clusters", "noise", "seed", "pipeline"}
        if unknown:
            raise InvalidParameterError(f"unknown spec keys: {sorted(unknown)}")
        try:
            clusters = []
            for c in data["clusters"]:
                extra = set(c) - {"mean", "scale", "covariance", "count"}
                if extra:
                    raise InvalidParameterError(f"unknown cluster keys: {sorted(extra)}")
                mean = np.asarray(c["mean"], dtype=np.float64)
                if "covariance" in c:
                    cov = np.asarray(c["covariance"], dtype=np.float64)
                else:
                    cov = float(c.get("scale", 1.0)) ** 2 * np.eye(mean.size)
                clusters.append(ClusterComponent(mean, cov, int(c["count"])))
            noise = None
            if data.get("noise"):
                nz = data["noise"]
                extra = set(nz) - {"count", "low", "high"}
                if extra:
                    raise InvalidParameterError(f"unknown noise keys: {sorted(extra)}")
                d = clusters[0].mean.size
                low = np.broadcast_to(np.asarray(nz["low"], dtype=np.float64), (d,)).copy()
                high = np.broadcast_to(np.asarray(nz["high"], dtype=np.float64), (d,)).copy()
                if int(nz["count"]) > 0:
                    noise = NoiseComponent(int(nz["count"]), low, high)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameterError):
                raise
            raise InvalidParameterError(f"malformed synthetic spec: {exc!r}") from None
        return cls(tuple(clusters), noise, int(data.get("seed", 0)))


def bundled_spec_path(name):
    """Path of a spec shipped with the package (``"noisy"`` or ``"clean"``)."""
    path = _DATA_DIR / f"{name}.toml"
    if not path.exists():
        raise InvalidInputError(f"no bundled spec named {name!r}")
    return path


def load_spec_file(path):
    """Read a TOML or JSON spec; returns ``(SyntheticSpec, pipeline dict)``."""
    path = Path(path)
    if not path.exists() and not path.suffix and (_DATA_DIR / f"{path}.toml").exists():
        path = _DATA_DIR / f"{path}.toml"
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot open ({exc.strerror})") from None
    try:
        if path.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: top level must be a table/object")
    return SyntheticSpec.from_dict(data), dict(data.get("pipeline", {}))


def generate_synthetic(spec, seed=None):
    """Draw ``(FeatureSet, labels)``; label ``-1`` marks a uniform outlier.

    Rows are shuffled so ids carry no label information.
    """
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng([int(seed), 0])
    parts, labels = [], []
    for j, c in enumerate(spec.clusters):
        L = np.linalg.cholesky(c.covariance)
        parts.append(c.mean + rng.standard_normal((c.count, spec.d)) @ L.T)
        labels.append(np.full(c.count, j))
    if spec.noise is not None:
        n = spec.noise
        parts.append(rng.uniform(n.low, n.high, size=(n.count, spec.d)))
        labels.append(np.full(n.count, -1))
    X = np.vstack(parts)
    y = np.concatenate(labels)
    perm = rng.permutation(X.shape[0])
    return FeatureSet(X[perm]), y[perm]


def sample_reference(spec, n, seed=None):
    """Clean held-out sample from the cluster components only."""
    n = check_int(n, "reference size", min_value=2)
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng([int(seed), 1])
    weights = np.array([c.count for c in spec.clusters], dtype=np.float64)
    counts = np.floor(n * weights / weights.sum()).astype(int)
    leftover = n - counts.sum()
    frac = n * weights / weights.sum() - counts
    counts[np.argsort(-frac, kind="stable")[:leftover]] += 1
    parts = []
    for c, k in zip(spec.clusters, counts):
        L = np.linalg.cholesky(c.covariance)
        parts.append(c.mean + rng.standard_normal((k, spec.d)) @ L.T)
    return np.vstack(parts)


@dataclass(frozen=True)
class GaussianModelState:
    mean: np.ndarray
    covariance: np.ndarray
    fitted_count: int


@dataclass(frozen=True)
class GMMState:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    fitted_count: int

    def moments(self):
        """Moment-matched single Gaussian of the mixture."""
        mean = self.weights @ self.means
        diff = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covariances)
        cov = cov + (self.weights[:, None] * diff).T @ diff
        return GaussianModelState(mean, 0.5 * (cov + cov.T), self.fitted_count)


def _floor_eigenvalues(cov, floor):
    w, V = np.linalg.eigh(cov)
    if w.min() >= floor:
        return cov
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


class GaussianTrainer(BaseEstimator):
    """Maximum-likelihood Gaussian fit, the desk-scale generative model.

    Parameters
    ----------
    ridge : float
        Floor applied to covariance eigenvalues.
    blend : float or None
        ``None`` (default) ignores any warm start, so the fit is the exact
        MLE of the training rows.  A value ``beta`` in ``(0, 1)`` returns the
        moment-matched mixture ``beta * previous + (1 - beta) * fit``.
    """

    supports_warm_start = True

    def __init__(self, ridge=1e-6, blend=None):
        self.ridge = ridge
        self.blend = blend

    def train(self, X, warm_start=None, seed=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidParameterError("cannot fit a Gaussian to an empty training set")
        X = check_matrix(X, "training data", dtype=np.float64)
        n, d = X.shape
        mean = X.mean(axis=0)
        if n > 1:
            cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
        else:
            cov = np.zeros((d, d))
        cov = _floor_eigenvalues(0.5 * (cov + cov.T), self.ridge)
        state = GaussianModelState(mean, cov, n)
        if self.blend is not None and warm_start is not None:
            beta = check_real(self.blend, "blend", low=0.0, high=1.0)
            prev = warm_start.moments() if isinstance(warm_start, GMMState) else warm_start
            mix = GMMState(np.array([beta, 1.0 - beta]), np.vstack([prev.mean, mean]),
                           np.stack([prev.covariance, cov]), n).moments()
            state = GaussianModelState(mix.mean, _floor_eigenvalues(mix.covariance, self.ridge), n)
        return state

    def fit(self, X, y=None):
        self.state_ = self.train(X)
        self.mean_ = self.state_.mean
        self.covariance_ = self.state_.covariance
        return self


class GMMTrainer(BaseEstimator):
    """EM Gaussian mixture with k-means++ starts.

    A warm start with the same component count seeds EM from the previous
    state instead of k-means++.
    """

    supports_warm_start = True

    def __init__(self, n_components=2, max_iter=100, tol=1e-8, ridge=1e-6):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge

    def train(self, X, warm_start=None, seed=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidParameterError("cannot fit a mixture to an empty training set")
        X = check_matrix(X, "training data", dtype=np.float64)
        k = check_int(self.n_components, "n_components", min_value=1, max_value=X.shape[0])
        init = {}
        if isinstance(warm_start, GMMState) and warm_start.weights.shape[0] == k:
            init = dict(
                weights_init=warm_start.weights / warm_start.weights.sum(),
                means_init=warm_start.means,
                precisions_init=np.linalg.inv(warm_start.covariances),
            )
        gm = GaussianMixture(
            n_components=k, covariance_type="full", tol=self.tol, reg_covar=self.ridge,
            max_iter=self.max_iter, init_params="k-means++", random_state=seed, **init,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gm.fit(X)
        return GMMState(gm.weights_.copy(), gm.means_.copy(), gm.covariances_.copy(), X.shape[0])

    def fit(self, X, y=None):
        self.state_ = self.train(X)
        return self


def _gaussian(state):
    if isinstance(state, GMMState):
        state = state.moments()
    if isinstance(state, GaussianModelState):
        return np.atleast_1d(state.mean), np.atleast_2d(state.covariance)
    mean, cov = state
    return np.atleast_1d(np.asarray(mean, dtype=np.float64)), np.atleast_2d(
        np.asarray(cov, dtype=np.float64))


def _spd_root(cov, which):
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise InvalidParameterError(f"covariance {which} is not symmetric")
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if not w.min() > 0:
        raise InvalidParameterError(f"covariance {which} is not positive definite")
    return (V * np.sqrt(w)) @ V.T


def frechet_distance(a, b):
    """Squared 2-Wasserstein distance between two Gaussians.

    ``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`` where the trace
    of the square root comes from the eigenvalues of the symmetric matrix
    ``S_a^{1/2} S_b S_a^{1/2}``.  States may be :class:`GaussianModelState`,
    :class:`GMMState` (collapsed to its moments) or ``(mean, cov)`` pairs.
    """
    mu_a, S_a = _gaussian(a)
    mu_b, S_b = _gaussian(b)
    if mu_a.shape != mu_b.shape or S_a.shape != S_b.shape:
        raise InvalidParameterError("Gaussians live in different dimensions")
    root = _spd_root(S_a, "a")
    _spd_root(S_b, "b")
    inner = root @ S_b @ root
    ev = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    diff = mu_a - mu_b
    fd = float(diff @ diff + np.trace(S_a) + np.trace(S_b) - 2.0 * np.sum(np.sqrt(ev)))
    return max(fd, 0.0)


class FrechetScore:
    """Metric callable: Frechet distance from a model to a fixed reference fit."""

    def __init__(self, reference, ridge=1e-6):
        ref = reference.points if isinstance(reference, FeatureSet) else reference
        ref = np.asarray(ref, dtype=np.float64)
        if ref.ndim != 2 or ref.shape[0] == 0:
            raise InvalidParameterError("reference sample must be a nonempty matrix")
        self.reference_state = GaussianTrainer(ridge=ridge).train(ref)

    def __call__(self, state):
        return frechet_distance(state, self.reference_state)


def score_against_reference(model, reference, ridge=1e-6):
    return FrechetScore(reference, ridge)(model)


def is_v_shaped(scores):
    """Interior minimum strictly below both end points."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 3:
        return False
    i = int(np.argmin(s))
    return 0 < i < s.size - 1 and s[i] < s[0] and s[i] < s[-1]


def is_monotone_non_increasing(scores):
    return bool(np.all(np.diff(np.asarray(scores, dtype=np.float64)) <= 0))


@dataclass(frozen=True)
class ExperimentSummary:
    seeds: list
    curves: list
    active_curves: list = None

    @property
    def fraction_v_shaped(self):
        return float(np.mean([is_v_shaped(c.scores) for c in self.curves]))

    @property
    def fraction_monotone(self):
        return float(np.mean([is_monotone_non_increasing(c.scores) for c in self.curves]))

    @property
    def optimal_stage_histogram(self):
        n_stages = max(len(c.scores) for c in self.curves)
        hist = np.bincount([c.optimal_index for c in self.curves], minlength=n_stages)
        return [int(h) for h in hist]

    @property
    def mean_optimal_stage(self):
        return float(np.mean([c.optimal_index for c in self.curves]))

    @property
    def fraction_active_within_one(self):
        if not self.active_curves:
            return None
        close = [abs(a.optimal_index - n.optimal_index) <= 1
                 for a, n in zip(self.active_curves, self.curves)]
        return float(np.mean(close))

    def to_dict(self):
        out = {
            "seeds": [int(s) for s in self.seeds],
            "fraction_v_shaped": self.fraction_v_shaped,
            "fraction_monotone": self.fraction_monotone,
            "mean_optimal_stage": self.mean_optimal_stage,
            "optimal_stage_histogram": self.optimal_stage_histogram,
            "curves": [c.to_dict() for c in self.curves],
        }
        if self.active_curves:
            out["fraction_active_within_one"] = self.fraction_active_within_one
            out["active_curves"] = [c.to_dict() for c in self.active_curves]
        return out


def vshape_experiment(spec, base_size, increment, seeds, *, reference_size=2000,
                      active_size=None, trainer=None, n_neighbors=None,
                      target_geomean=0.8):
    """Run centrality, schedule and sweep once per seed on fresh synthetic data.

    Each seed draws its own dataset and its own clean reference sample.
    With ``active_size`` set, an active-set sweep is run alongside the
    normal one on the same schedule.
    """
    from .centrality import StationaryCentrality
    from .curriculum import ActiveSetConfig, build_schedule, run_active_set, run_normal

    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidParameterError("at least one seed is required")
    trainer = GaussianTrainer() if trainer is None else trainer
    curves, active_curves = [], []
    for seed in seeds:
        features, _ = generate_synthetic(spec, seed)
        metric = FrechetScore(sample_reference(spec, reference_size, seed))
        est = StationaryCentrality(n_neighbors=n_neighbors, target_geomean=target_geomean)
        ranking = est.fit(features).ranking_
        schedule = build_schedule(ranking, base_size, increment)
        curves.append(run_normal(schedule, features, trainer, metric, seed))
        if active_size is not None:
            config = ActiveSetConfig(active_size, seed)
            active_curves.append(run_active_set(schedule, config, features, trainer,
                                                metric, seed))
    return ExperimentSummary(seeds, curves, active_curves or None)
