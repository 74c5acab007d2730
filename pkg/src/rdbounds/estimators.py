"""scikit-learn style wrappers for the fit-shaped parts of the toolkit."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import Cylinder
from .kernels import ScalarField, neg_holder_norm, sup_norm
from .experiments import estimate_tail_exponent


class TailExponentEstimator(BaseEstimator):
    """Fit the tail shape P(X > x) ~ exp(-c x^beta) of positive samples.

    After ``fit`` the estimator exposes ``beta_``, ``c_``, ``threshold_``
    and the full ``fit_`` record; ``score`` is the negative of the fit
    residual so larger is better.
    """

    def __init__(self, quantile: float = 0.95, method: str = "mle"):
        self.quantile = quantile
        self.method = method

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=float).ravel()
        self.fit_ = estimate_tail_exponent(x, self.quantile, self.method)
        self.beta_ = self.fit_.beta
        self.c_ = self.fit_.c
        self.threshold_ = self.fit_.fit_range[0]
        self.n_features_in_ = 1
        return self

    def log_survival(self, X):
        """Model log P(X > x) relative to the threshold, for x above it."""
        check_is_fitted(self, "beta_")
        x = np.asarray(X, dtype=float).ravel()
        return -self.c_ * (x**self.beta_ - self.threshold_**self.beta_)

    def score(self, X, y=None):
        check_is_fitted(self, "fit_")
        return -float(estimate_tail_exponent(np.asarray(X, dtype=float).ravel(),
                                             self.quantile, self.method).residual)


class NoiseNormTransformer(TransformerMixin, BaseEstimator):
    """Map noise realisations to [negative Hoelder norm, sup norm] features.

    ``transform`` takes a sequence of ScalarField (or NoiseRealization)
    objects whose grids cover the unit cylinder plus one unit of margin.
    The transformer is stateless; ``fit`` only records the feature count.
    """

    def __init__(self, alpha: float = 0.49, R: float = 0.0, coarsen: bool = True):
        self.alpha = alpha
        self.R = R
        self.coarsen = coarsen

    def fit(self, X, y=None):
        self.n_features_out_ = 2
        return self

    def transform(self, X):
        rows = []
        for item in X:
            fld = getattr(item, "field", item)
            if not isinstance(fld, ScalarField):
                raise TypeError("expected ScalarField or NoiseRealization items")
            cyl = Cylinder(self.R, fld.grid.d)
            rows.append([neg_holder_norm(fld, self.alpha, cyl, coarsen=self.coarsen), sup_norm(fld, cyl)])
        return np.asarray(rows, dtype=float)

    def get_feature_names_out(self, input_features=None):
        return np.array(["neg_holder_norm", "sup_norm"], dtype=object)
