"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import warnings

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InputError

#: antisymmetrization corrections above this size trigger a warning
ANTISYM_WARN = 1e-12


def as_vector(u, dim=None, name="vector"):
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {u.shape}")
    if dim is not None and u.shape[0] != dim:
        raise InputError(f"{name} has length {u.shape[0]}, expected {dim}")
    return u


def as_points(X, dim=None, name="points"):
    """Return a 2-D float array of points, accepting a single point too."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    try:
        X = check_array(X, ensure_2d=True, dtype=float, ensure_all_finite=True)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from exc
    if dim is not None and X.shape[1] != dim:
        raise InputError(f"{name} have dimension {X.shape[1]}, expected {dim}")
    return X


def as_antisymmetric(M, name="matrix"):
    """Antisymmetrize ``M`` as ``(M - M^T)/2``, warning on a visible correction."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    A = 0.5 * (M - M.T)
    correction = np.max(np.abs(M - A)) if M.size else 0.0
    if correction > ANTISYM_WARN:
        warnings.warn(f"{name} was not antisymmetric (correction {correction:.3g})",
                      RuntimeWarning, stacklevel=3)
    return A
