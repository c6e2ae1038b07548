"""Small argument checkers shared by the public functions and estimators."""

import numbers

import numpy as np

from .exceptions import InvalidInputError, InvalidParameterError


def check_int(value, name, *, min_value=None, max_value=None):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise InvalidParameterError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if min_value is not None and value < min_value:
        raise InvalidParameterError(f"{name} must be >= {min_value}, got {value}")
    if max_value is not None and value > max_value:
        raise InvalidParameterError(f"{name} must be <= {max_value}, got {value}")
    return value


def check_real(value, name, *, low=None, high=None, low_open=False, high_open=False):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Real):
        raise InvalidParameterError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise InvalidParameterError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        bound = "(" if low_open else "["
        raise InvalidParameterError(f"{name}={value} outside {bound}{low}, ...")
    if high is not None and (value > high or (high_open and value == high)):
        bound = ")" if high_open else "]"
        raise InvalidParameterError(f"{name}={value} outside ..., {high}{bound}")
    return value


def check_matrix(X, name="X", *, min_rows=1, min_cols=1, dtype=None):
    """Return ``X`` as a finite 2-D float array.

    float32 input is kept as float32 unless ``dtype`` says otherwise; any
    other numeric input becomes float64.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {X.shape}")
    if dtype is None:
        dtype = np.float32 if X.dtype == np.float32 else np.float64
    try:
        X = np.asarray(X, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} is not numeric: {exc}") from None
    if X.shape[0] < min_rows:
        raise InvalidInputError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if X.shape[1] < min_cols:
        raise InvalidInputError(f"{name} needs at least {min_cols} columns, got {X.shape[1]}")
    bad = ~np.isfinite(X)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        raise InvalidInputError(f"{name} has a non-finite value in row {row}")
    return X
