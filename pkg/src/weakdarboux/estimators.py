"""Transformer-style wrappers: Darboux coordinates as ``fit`` / ``transform``.

``fit`` builds the coordinate change from a form, and ``transform`` maps
points to Darboux coordinates.  Hyperparameters go through ``__init__``
unchanged, so ``get_params`` / ``set_params`` and ``clone`` behave as
usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_antisymmetric, as_points
from .fields import FormField, named_field
from .moser import DEFAULT_FD_STEP, DEFAULT_QUAD_NODES, DEFAULT_STEPS, darboux_chart
from .symplin import DEFAULT_MARGIN, linear_darboux


class LinearDarboux(TransformerMixin, BaseEstimator):
    """Linear Darboux coordinates of a constant form.

    ``fit(omega)`` takes an antisymmetric ``(d, d)`` matrix and finds ``A``
    with ``A.T @ omega @ A = J_std``.  ``transform(U)`` returns the
    coordinates ``A^{-1} u`` of each row.

    Parameters
    ----------
    margin : float
        Invertibility margin on ``sigma_min(omega)``.

    Attributes
    ----------
    basis_ : ndarray of shape (d, d)
        The symplectic basis ``A`` (columns).
    n_features_in_ : int
    """

    def __init__(self, margin=DEFAULT_MARGIN):
        self.margin = margin

    def fit(self, X, y=None):
        W = as_antisymmetric(X, "omega")
        self.basis_ = linear_darboux(W, self.margin)
        self.inverse_ = np.linalg.inv(self.basis_)
        self.n_features_in_ = W.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        U = as_points(X, self.n_features_in_)
        return U @ self.inverse_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return as_points(X, self.n_features_in_) @ self.basis_.T


class DarbouxChart(TransformerMixin, BaseEstimator):
    """Local Darboux chart of a closed form field near ``x0``.

    Parameters
    ----------
    field : FormField or str
        The form, or the name of a built-in field.
    x0 : array_like, optional
        Base point; defaults to the origin.
    steps, quad_nodes, fd_step, margin, tol
        Moser-flow settings, see :func:`weakdarboux.moser.darboux_chart`.

    Notes
    -----
    ``fit(X)`` integrates the chart at the rows of ``X``.  It records the
    pullback residual against ``J_std`` there in ``residual_`` and keeps
    the full report in ``report_``.  ``transform`` re-integrates for new
    points.
    """

    def __init__(self, field="perturbed_canonical", x0=None, steps=DEFAULT_STEPS,
                 quad_nodes=DEFAULT_QUAD_NODES, fd_step=DEFAULT_FD_STEP,
                 margin=DEFAULT_MARGIN, tol=1e-5):
        self.field = field
        self.x0 = x0
        self.steps = steps
        self.quad_nodes = quad_nodes
        self.fd_step = fd_step
        self.margin = margin
        self.tol = tol

    def _field(self):
        return named_field(self.field) if isinstance(self.field, str) else self.field

    def fit(self, X, y=None):
        fld = self._field()
        if not isinstance(fld, FormField):
            raise TypeError("field must be a FormField or a built-in name")
        x0 = np.zeros(fld.dim) if self.x0 is None else np.asarray(self.x0, dtype=float)
        pts = as_points(X, fld.dim)
        self.chart_ = darboux_chart(fld, x0, pts, self.steps, self.margin, self.quad_nodes,
                                    self.fd_step, self.tol)
        self.report_ = self.chart_.residual_report
        self.residual_ = self.report_["darboux"]
        self.n_features_in_ = fld.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "chart_")
        return self.chart_(as_points(X, self.n_features_in_))

    def fit_transform(self, X, y=None):
        # the fitted samples are already integrated
        return self.fit(X).chart_.final_images.copy()

    def jacobian(self, X):
        check_is_fitted(self, "chart_")
        return self.chart_.jacobian(as_points(X, self.n_features_in_))
