"""Stationary-probability centrality on a weighted kNN digraph.

Each point sends ``K`` directed edges to its exact Euclidean nearest
neighbours, weighted ``exp(-d**2 / sigma**2)``.  Row normalisation turns
the weights into a Markov transition matrix ``P``; the centrality of a
point is its mass in the stationary distribution ``u = P.T @ u``, found
by power iteration from the uniform vector.  Dense regions attract the
random walk, so points near cluster cores rank first.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import gmres
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from ._validation import check_int, check_real
from .exceptions import (
    ConvergenceError,
    DegenerateInputError,
    InvalidInputError,
    InvalidParameterError,
)
from .features import FeatureSet

__all__ = [
    "NeighborLists",
    "WeightedDigraph",
    "CentralityRanking",
    "StationaryCentrality",
    "pairwise_knn",
    "default_k",
    "calibrate_sigma",
    "build_digraph",
    "stationary_centrality",
]

TELEPORT = 1e-3

# bytes of screened distances held per block
_BLOCK_BYTES = 1 << 27
# float64 values materialised per refinement chunk
_REFINE_VALUES = 1 << 24


@dataclass(frozen=True)
class NeighborLists:
    """Exact kNN result.  ``indices`` are row positions, not ids."""

    ids: np.ndarray
    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]

    @property
    def neighbor_ids(self):
        return self.ids[self.indices]

    def as_list(self):
        """``[(id, neighbor ids, distances), ...]`` in row order."""
        nbr = self.neighbor_ids
        return [
            (int(i), tuple(int(j) for j in nbr[r]), tuple(float(x) for x in self.distances[r]))
            for r, i in enumerate(self.ids)
        ]


def _as_features(X, ids=None):
    if isinstance(X, FeatureSet):
        return X
    return FeatureSet(X, ids)


def pairwise_knn(features, k, *, screen_dtype=None):
    """Exact ``k`` nearest neighbours of every point, excluding itself.

    Candidates are screened blockwise with a matrix product in
    ``screen_dtype`` (float32 for float32 input, float64 otherwise), keeping
    every point whose screened squared distance is within a rounding bound
    of the k-th smallest.  Survivors are re-measured exactly in float64 and
    sorted by ``(distance, id)``, so the result does not depend on the
    screening precision.
    """
    features = _as_features(features)
    X, ids = features.points, features.ids
    m, d = X.shape
    k = check_int(k, "K", min_value=1)
    if k >= m:
        raise InvalidParameterError(f"K={k} must be smaller than the number of points m={m}")
    if screen_dtype is None:
        screen_dtype = np.float32 if X.dtype == np.float32 else np.float64
    screen_dtype = np.dtype(screen_dtype)

    # Centering shrinks norms and hence the cancellation in |x|^2 + |y|^2 - 2xy.
    mean = X.mean(axis=0, dtype=np.float64)
    Xs = np.empty((m, d), dtype=screen_dtype)
    step = max(1, _REFINE_VALUES // d)
    for a in range(0, m, step):
        Xs[a:a + step] = X[a:a + step] - mean
    sq = np.einsum("ij,ij->i", Xs, Xs, dtype=np.float64)
    sq_s = sq.astype(screen_dtype)
    # |fl(S) - S| <= gamma * (|x|^2 + |y|^2) covers the dot product, the
    # norms and the cast of the points themselves; 2x for the threshold.
    gamma = 4.0 * (d + 4) * np.finfo(screen_dtype).eps
    margin = gamma * (sq + sq.max()) + np.finfo(np.float64).tiny

    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k), dtype=np.float64)
    block = max(1, min(m, _BLOCK_BYTES // (m * screen_dtype.itemsize)))
    for start in range(0, m, block):
        stop = min(m, start + block)
        S = Xs[start:stop] @ Xs.T
        S *= -2
        S += sq_s[start:stop, None]
        S += sq_s[None, :]
        b = stop - start
        S[np.arange(b), np.arange(start, stop)] = np.inf
        kth = np.partition(S, k - 1, axis=1)[:, k - 1].astype(np.float64)
        thr = (kth + margin[start:stop]).astype(screen_dtype)
        thr = np.nextafter(thr, np.inf, dtype=screen_dtype)
        rows, cols = np.nonzero(S <= thr[:, None])
        del S
        _refine(X, ids, rows + start, cols, k, start, stop, indices, distances)
    return NeighborLists(ids=ids, indices=indices, distances=distances)


def _refine(X, ids, rows, cols, k, start, stop, indices, distances):
    d = X.shape[1]
    d2 = np.empty(rows.shape[0], dtype=np.float64)
    step = max(1, _REFINE_VALUES // d)
    for a in range(0, rows.shape[0], step):
        diff = X[rows[a:a + step]].astype(np.float64) - X[cols[a:a + step]]
        d2[a:a + step] = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((ids[cols], d2, rows))
    rows, cols, d2 = rows[order], cols[order], d2[order]
    first = np.searchsorted(rows, np.arange(start, stop))
    take = first[:, None] + np.arange(k)[None, :]
    indices[start:stop] = cols[take]
    distances[start:stop] = np.sqrt(d2[take])


def default_k(m):
    """``round(4 ln m)`` clamped to ``[1, m - 1]``."""
    m = check_int(m, "m", min_value=2)
    k = int(math.floor(4.0 * math.log(m) + 0.5))
    return min(max(k, 1), m - 1)


def calibrate_sigma(distances, target_geomean=0.8):
    """Bandwidth whose kNN edge weights have geometric mean ``target_geomean``.

    The geometric mean of ``exp(-d**2 / sigma**2)`` is
    ``exp(-mean(d**2) / sigma**2)``, which inverts in closed form.
    """
    target = check_real(target_geomean, "target_geomean", low=0.0, high=1.0,
                        low_open=True, high_open=True)
    dist = np.asarray(distances, dtype=np.float64).ravel()
    if dist.size == 0 or not np.all(np.isfinite(dist)) or np.any(dist < 0):
        raise InvalidInputError("distances must be a nonempty set of finite nonnegative values")
    mean_sq = np.mean(dist * dist)
    if not mean_sq > 0:
        raise DegenerateInputError("all neighbour distances are zero; sigma is undefined")
    return math.sqrt(mean_sq / -math.log(target))


@dataclass(frozen=True)
class WeightedDigraph:
    """kNN digraph: row ``r`` has out-edges to rows ``targets[r]``."""

    ids: np.ndarray
    targets: np.ndarray
    distances: np.ndarray
    sigma: float

    @property
    def K(self):
        return self.targets.shape[1]

    @property
    def m(self):
        return self.targets.shape[0]

    @property
    def log_weights(self):
        return -(self.distances ** 2) / self.sigma ** 2

    @property
    def weights(self):
        # Floored at the smallest normal double so far outliers keep a
        # positive edge; transition_matrix works from log_weights anyway.
        return np.maximum(np.exp(self.log_weights), np.finfo(np.float64).tiny)

    def geometric_mean_weight(self):
        return math.exp(float(np.mean(self.log_weights)))

    def _csr(self, values):
        m, K = self.targets.shape
        indptr = np.arange(0, m * K + 1, K)
        return sp.csr_matrix((values.ravel(), self.targets.ravel(), indptr), shape=(m, m))

    def adjacency(self):
        return self._csr(self.weights)

    def transition_matrix(self):
        """Row-stochastic ``P``, normalised in log space so rows never vanish."""
        lw = self.log_weights
        P = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        return self._csr(P)

    def edges(self):
        """Iterate ``(source id, target id, weight)``."""
        tgt_ids = self.ids[self.targets]
        w = self.weights
        for r, src in enumerate(self.ids):
            for j in range(self.K):
                yield int(src), int(tgt_ids[r, j]), float(w[r, j])

    def to_dict(self, target_geomean=None):
        out = {"K": int(self.K), "sigma": float(self.sigma)}
        if target_geomean is not None:
            out["target_geomean"] = float(target_geomean)
        out["edges"] = [list(e) for e in self.edges()]
        return out


def build_digraph(features, k=None, target_geomean=0.8, *, screen_dtype=None):
    features = _as_features(features)
    if k is None:
        k = default_k(features.m)
    knn = pairwise_knn(features, k, screen_dtype=screen_dtype)
    sigma = calibrate_sigma(knn.distances, target_geomean)
    return WeightedDigraph(ids=features.ids, targets=knn.indices,
                           distances=knn.distances, sigma=sigma)


@dataclass(frozen=True)
class CentralityRanking:
    """Stationary centrality per point, aligned with ``ids``.

    ``variant`` is ``"plain"`` when the walk on ``P`` converged, or
    ``"teleport"`` when the fallback chain ``(1 - 1e-3) P + 1e-3 / m``
    was needed; ``residual`` is measured against whichever chain was used.
    """

    ids: np.ndarray
    centrality: np.ndarray
    residual: float
    n_iter: int
    variant: str = "plain"

    @property
    def order_rows(self):
        return np.lexsort((self.ids, -self.centrality))

    @property
    def order(self):
        """Ids by descending centrality, ties by ascending id."""
        return self.ids[self.order_rows]

    @property
    def ranks(self):
        """1-based rank of each row (1 = most central)."""
        ranks = np.empty(self.ids.shape[0], dtype=np.int64)
        ranks[self.order_rows] = np.arange(1, self.ids.shape[0] + 1)
        return ranks

    def to_records(self):
        rows = self.order_rows
        return [
            {"id": int(self.ids[r]), "centrality": float(self.centrality[r]), "rank": pos + 1}
            for pos, r in enumerate(rows)
        ]

    @classmethod
    def from_records(cls, records):
        """Rebuild from ``to_records`` output (residual is not stored there)."""
        try:
            ids = np.array([int(r["id"]) for r in records], dtype=np.int64)
            cent = np.array([float(r["centrality"]) for r in records], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed centrality record: {exc}") from None
        if len(np.unique(ids)) != len(ids):
            raise InvalidInputError("centrality records contain duplicate ids")
        return cls(ids=ids, centrality=cent, residual=float("nan"), n_iter=0)


def _power_iterate(PT, tol, max_iter, teleport, stall_window=200, u0=None):
    m = PT.shape[0]
    u = np.full(m, 1.0 / m) if u0 is None else u0
    history = []
    for it in range(1, max_iter + 1):
        v = PT @ u
        if teleport:
            v = (1.0 - teleport) * v + teleport / m
        res = float(np.abs(v - u).sum())
        if res < tol:
            return u, res, it, True
        history.append(res)
        if len(history) > stall_window and res > 0.999 * history[-stall_window - 1]:
            return u, res, it, False
        u = v / v.sum()
    v = PT @ u
    if teleport:
        v = (1.0 - teleport) * v + teleport / m
    return u, float(np.abs(v - u).sum()), max_iter, False


def _teleport_solve(PT, start, tol):
    m = PT.shape[0]
    A = sp.identity(m, format="csr") - (1.0 - TELEPORT) * PT
    b = np.full(m, TELEPORT / m)
    x, _ = gmres(A, b, x0=start, rtol=min(tol, 1e-12) / math.sqrt(m), atol=0.0,
                 restart=50, maxiter=200)
    # The true solution is >= TELEPORT / m elementwise.
    x = np.maximum(x, TELEPORT / m)
    return x / x.sum()


def stationary_centrality(graph, tol=1e-10, max_iter=10_000):
    """Stationary distribution of the walk on ``graph`` by power iteration.

    Returns a ranking whose ``centrality`` satisfies
    ``|P.T u - u|_1 < tol``.  A stalled or exhausted walk (periodic or
    badly reducible chains) is retried once on the teleporting chain.
    """
    tol = check_real(tol, "tol", low=0.0, low_open=True)
    max_iter = check_int(max_iter, "max_iter", min_value=1)
    PT = graph.transition_matrix().T.tocsr()
    u, res, it, ok = _power_iterate(PT, tol, max_iter, 0.0)
    variant = "plain"
    if not ok:
        # The teleporting chain contracts only by 1 - TELEPORT per step, far
        # too slowly for tol; solve its fixed point directly, then polish.
        u0 = _teleport_solve(PT, u, tol)
        u, res, it2, ok = _power_iterate(PT, tol, max_iter, TELEPORT, u0=u0)
        it += it2
        variant = "teleport"
        if not ok:
            raise ConvergenceError(
                f"power iteration did not reach tol={tol:g} (residual {res:.3e})",
                residual=res, n_iter=it,
            )
    return CentralityRanking(ids=graph.ids, centrality=u, residual=res,
                             n_iter=it, variant=variant)


class StationaryCentrality(BaseEstimator):
    """Estimator wrapper around the kNN-digraph centrality.

    Parameters
    ----------
    n_neighbors : int or None
        Out-degree ``K``; ``None`` uses :func:`default_k`.
    target_geomean : float
        Geometric mean the calibrated edge weights must have.
    tol, max_iter
        Power-iteration stopping rule.
    screen_dtype : dtype or None
        Precision of the kNN candidate screen.

    Attributes
    ----------
    centrality_ : ndarray of shape (m,)
    order_ : ndarray of ids, most central first
    ranking_ : CentralityRanking
    graph_ : WeightedDigraph
    sigma_ : float
    n_neighbors_ : int
    """

    def __init__(self, n_neighbors=None, target_geomean=0.8, tol=1e-10,
                 max_iter=10_000, screen_dtype=None):
        self.n_neighbors = n_neighbors
        self.target_geomean = target_geomean
        self.tol = tol
        self.max_iter = max_iter
        self.screen_dtype = screen_dtype

    def fit(self, X, y=None, ids=None):
        features = _as_features(X, ids)
        k = default_k(features.m) if self.n_neighbors is None else self.n_neighbors
        self.graph_ = build_digraph(features, k, self.target_geomean,
                                    screen_dtype=self.screen_dtype)
        self.ranking_ = stationary_centrality(self.graph_, self.tol, self.max_iter)
        self.n_neighbors_ = self.graph_.K
        self.sigma_ = self.graph_.sigma
        self.centrality_ = self.ranking_.centrality
        self.order_ = self.ranking_.order
        self.n_features_in_ = features.d
        return self

    def fit_transform(self, X, y=None, ids=None):
        """Fit, then return the centrality of each row."""
        return self.fit(X, ids=ids).centrality_
