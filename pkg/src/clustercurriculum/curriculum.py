"""Cluster-curriculum schedules and the two training sweeps.

Points sorted by descending centrality are cut into a base block ``X0``
and equal increments ``X1 .. Xl``.  :func:`run_normal` retrains from
scratch on every cumulative prefix; :func:`run_active_set` keeps the
training set at a fixed size (newest increment plus a uniform sample of
history) and warm-starts each stage from the previous model.  Both score
every stage with an injected quality metric, lower being better.

A trainer is any object with

* ``train(X, warm_start=None, seed=None) -> state``, deterministic in its
  arguments, and
* a boolean ``supports_warm_start``.

A metric is any callable ``metric(state) -> float``.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone

from ._validation import check_int
from .exceptions import InvalidInputError, InvalidParameterError, TrainerError
from .features import FeatureSet

__all__ = [
    "CurriculumSchedule",
    "ScoreCurve",
    "ActiveSetConfig",
    "CurriculumSearch",
    "build_schedule",
    "run_normal",
    "run_active_set",
    "sample_history",
    "select_optimal",
]


@dataclass(frozen=True)
class CurriculumSchedule:
    base_size: int
    increment: int
    stages: tuple

    @property
    def l(self):
        """Number of increments after the base block."""
        return len(self.stages) - 1

    @property
    def cumulative_sizes(self):
        return [int(s) for s in np.cumsum([len(s) for s in self.stages])]

    @property
    def order(self):
        return np.concatenate(self.stages)

    def prefix(self, i):
        """Ids of ``X0 u ... u Xi``."""
        return np.concatenate(self.stages[: i + 1])

    def to_dict(self):
        return {
            "base_size": int(self.base_size),
            "increment": int(self.increment),
            "stages": [[int(i) for i in s] for s in self.stages],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            stages = tuple(np.asarray(s, dtype=np.int64) for s in data["stages"])
            return cls(int(data["base_size"]), int(data["increment"]), stages)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed schedule: {exc}") from None


@dataclass(frozen=True)
class ScoreCurve:
    """Per-stage scores of one sweep.

    ``training_ids`` and ``models`` are kept in memory for inspection and
    are not serialised.
    """

    mode: str
    cumulative_sizes: list
    scores: list
    optimal_index: int
    seed: int
    training_ids: tuple = field(default=(), repr=False, compare=False)
    models: tuple = field(default=(), repr=False, compare=False)

    @property
    def best_model(self):
        return self.models[self.optimal_index] if self.models else None

    def to_dict(self):
        return {
            "mode": self.mode,
            "cumulative_sizes": [int(c) for c in self.cumulative_sizes],
            "scores": [float(s) for s in self.scores],
            "optimal_index": int(self.optimal_index),
            "seed": int(self.seed),
        }


@dataclass(frozen=True)
class ActiveSetConfig:
    active_size: int
    seed: int = 0


def _order_of(ranking):
    if hasattr(ranking, "order"):
        return np.asarray(ranking.order, dtype=np.int64)
    return np.asarray(ranking, dtype=np.int64).ravel()


def build_schedule(ranking, base_size, increment):
    """Cut a centrality order into ``[X0, X1, ..., Xl]``.

    ``ranking`` is a :class:`CentralityRanking` or a sequence of ids already
    in descending-centrality order.  The last increment holds the remainder.
    """
    order = _order_of(ranking)
    m = order.size
    base_size = check_int(base_size, "base_size", min_value=1)
    if base_size >= m:
        raise InvalidParameterError(f"base_size={base_size} must be smaller than m={m}")
    increment = check_int(increment, "increment", min_value=1, max_value=m - base_size)
    stages = [order[:base_size]]
    stages += [order[a:a + increment] for a in range(base_size, m, increment)]
    return CurriculumSchedule(base_size, increment, tuple(stages))


def select_optimal(scores):
    """Index of the smallest score; the earliest stage wins ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidParameterError("cannot select from an empty score list")
    if np.any(np.isnan(s)):
        raise InvalidParameterError("scores contain NaN")
    return int(np.argmin(s))


def sample_history(trained_ids, needed, seed):
    """``needed`` distinct ids drawn uniformly from ``trained_ids``."""
    pool = np.asarray(trained_ids, dtype=np.int64).ravel()
    needed = check_int(needed, "needed", min_value=0)
    if needed > pool.size:
        raise InvalidParameterError(f"cannot sample {needed} ids from a history of {pool.size}")
    rng = np.random.default_rng(seed)
    return rng.choice(pool, size=needed, replace=False)


def _stage_seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


def _sweep(mode, schedule, features, trainer, metric, seed, training_sets, warm):
    """Train and score each stage in order, wrapping failures in TrainerError."""
    seeds = _stage_seeds(seed, len(training_sets))
    sizes, scores, models, used = [], [], [], []
    state = None
    for i, ids in enumerate(training_sets):
        ids = ids() if callable(ids) else ids
        try:
            X = features.points[features.rows_for(ids)]
            state = trainer.train(X, warm_start=state if (warm and i > 0) else None,
                                  seed=seeds[i])
            score = float(metric(state))
        except Exception as exc:  # noqa: BLE001 - any trainer fault aborts the sweep
            partial = None
            if scores:
                partial = ScoreCurve(mode, sizes, scores, select_optimal(scores), seed,
                                     tuple(used), tuple(models))
            raise TrainerError(f"{mode} sweep failed at stage {i}: {exc}", i, partial) from exc
        used.append(np.asarray(ids))
        models.append(state)
        sizes.append(schedule.cumulative_sizes[i])
        scores.append(score)
    return ScoreCurve(mode, sizes, scores, select_optimal(scores), int(seed),
                      tuple(used), tuple(models))


def _features(features):
    if not isinstance(features, FeatureSet):
        raise InvalidParameterError("features must be a FeatureSet")
    return features


def run_normal(schedule, features, trainer, metric, seed=0):
    """Retrain from scratch on every cumulative prefix ``X0 u ... u Xi``."""
    features = _features(features)
    sets = [schedule.prefix(i) for i in range(len(schedule.stages))]
    return _sweep("normal", schedule, features, trainer, metric, seed, sets, warm=False)


def run_active_set(schedule, config, features, trainer, metric, seed=0):
    """Warm-started sweep on a fixed-size active set.

    Stage 0 trains on all of ``X0``.  Stage ``i`` trains on ``Xi`` plus
    ``active_size - |Xi|`` ids redrawn uniformly from ``X0 u ... u X(i-1)``
    (the whole history when it is smaller), starting from stage ``i-1``'s
    model.
    """
    features = _features(features)
    if not getattr(trainer, "supports_warm_start", False):
        raise InvalidParameterError(
            f"{type(trainer).__name__} cannot warm-start; the active-set sweep needs it")
    m = len(schedule.order)
    active = check_int(config.active_size, "active_size",
                       min_value=schedule.increment, max_value=m)
    history_seeds = _stage_seeds(config.seed, len(schedule.stages))

    def active_set(i):
        def build():
            new = schedule.stages[i]
            history = schedule.prefix(i - 1)
            needed = min(active - len(new), len(history))
            return np.concatenate([new, sample_history(history, needed, history_seeds[i])])
        return build

    sets = [schedule.stages[0]] + [active_set(i) for i in range(1, len(schedule.stages))]
    return _sweep("active_set", schedule, features, trainer, metric, seed, sets, warm=True)


class CurriculumSearch(BaseEstimator):
    """End-to-end cluster curriculum: centrality, schedule, sweep, argmin.

    Parameters
    ----------
    base_size, increment : int
        Sizes of ``X0`` and of each later block.
    mode : {"normal", "active_set"}
    active_size : int or None
        Required for ``mode="active_set"``.
    trainer : object or None
        Defaults to :class:`~clustercurriculum.simulation.GaussianTrainer`.
    metric : callable or None
        Defaults to the Frechet score against the ``reference`` passed to
        :meth:`fit`.
    centrality : estimator or None
        Defaults to :class:`~clustercurriculum.centrality.StationaryCentrality`.
    seed : int

    Attributes
    ----------
    ranking_, schedule_, curve_, best_model_, best_index_
    """

    def __init__(self, base_size, increment, mode="normal", active_size=None,
                 trainer=None, metric=None, centrality=None, seed=0):
        self.base_size = base_size
        self.increment = increment
        self.mode = mode
        self.active_size = active_size
        self.trainer = trainer
        self.metric = metric
        self.centrality = centrality
        self.seed = seed

    def fit(self, X, y=None, ids=None, reference=None):
        from .centrality import StationaryCentrality
        from .simulation import FrechetScore, GaussianTrainer

        features = X if isinstance(X, FeatureSet) else FeatureSet(X, ids)
        if self.mode not in ("normal", "active_set"):
            raise InvalidParameterError(f"unknown mode {self.mode!r}")
        metric = self.metric
        if metric is None:
            if reference is None:
                raise InvalidParameterError("pass metric= or a reference sample to fit()")
            metric = FrechetScore(reference)
        trainer = GaussianTrainer() if self.trainer is None else self.trainer
        centrality = StationaryCentrality() if self.centrality is None else clone(self.centrality)
        self.ranking_ = centrality.fit(features).ranking_
        self.schedule_ = build_schedule(self.ranking_, self.base_size, self.increment)
        if self.mode == "normal":
            self.curve_ = run_normal(self.schedule_, features, trainer, metric, self.seed)
        else:
            if self.active_size is None:
                raise InvalidParameterError("mode='active_set' requires active_size")
            config = ActiveSetConfig(self.active_size, self.seed)
            self.curve_ = run_active_set(self.schedule_, config, features, trainer, metric,
                                         self.seed)
        self.best_index_ = self.curve_.optimal_index
        self.best_model_ = self.curve_.best_model
        return self
