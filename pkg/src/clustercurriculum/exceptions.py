"""Exception classes used across the package.

Every class derives from :class:`ClusterCurriculumError` and from the
builtin exception a caller would naturally catch (``ValueError`` for bad
arguments, ``RuntimeError`` for numerical failures).
"""


class ClusterCurriculumError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ClusterCurriculumError, ValueError):
    """A scalar or structural parameter is outside its valid range."""


class InvalidInputError(ClusterCurriculumError, ValueError):
    """Input data is malformed (wrong shape, non-finite values, bad file)."""


class DegenerateInputError(ClusterCurriculumError, ValueError):
    """Input data is well-formed but carries no usable information."""


class RankDeficiencyError(DegenerateInputError):
    """A covariance matrix has zero eigenvalues.

    Attributes
    ----------
    null_dims : int
        Number of eigenvalues at or below the rank tolerance.
    """

    def __init__(self, message, null_dims):
        super().__init__(message)
        self.null_dims = null_dims


class ConvergenceError(ClusterCurriculumError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual, n_iter):
        super().__init__(message)
        self.residual = residual
        self.n_iter = n_iter


class TrainerError(ClusterCurriculumError, RuntimeError):
    """A trainer or metric failed part-way through a curriculum sweep.

    ``partial_curve`` holds the scores of the stages completed before
    ``stage`` failed (``None`` when stage 0 failed).
    """

    def __init__(self, message, stage, partial_curve=None):
        super().__init__(message)
        self.stage = stage
        self.partial_curve = partial_curve
