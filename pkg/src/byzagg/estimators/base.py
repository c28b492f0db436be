"""scikit-learn style wrappers around the aggregation rules.

Every estimator is fitted on an ``(m, d)`` matrix of client updates (or
samples) and exposes the robust location as ``location_``. ``transform``
centres new data at that location.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..core import RngState, stream_id
from . import classical
from .config import EstimatorConfig, aggregate_with_info, bucketed_aggregate_with_info
from .filters import PREFILTER_C0, filtering, no_regret
from .thresholds import compute_threshold


def _rng(random_state, label):
    if isinstance(random_state, RngState):
        return random_state
    seed = 0 if random_state is None else int(random_state)
    return RngState(seed, stream_id(label))


class RobustLocation(TransformerMixin, BaseEstimator):
    """Base class; subclasses implement ``_locate(X)``."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1, ensure_all_finite=True)
        self.n_features_in_ = X.shape[1]
        self.converged_ = True
        self.n_iter_ = 0
        self.weights_ = None
        self.location_ = np.asarray(self._locate(X), dtype=float)
        return self

    def transform(self, X):
        check_is_fitted(self, "location_")
        X = check_array(X, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X - self.location_

    def _set_info(self, res):
        self.converged_ = bool(res.converged)
        self.n_iter_ = int(res.iterations)
        self.weights_ = res.weights


class MeanAggregator(RobustLocation):
    def _locate(self, X):
        return classical.mean(X)


class CoordinateMedian(RobustLocation):
    def _locate(self, X):
        return classical.coord_median(X)


class TrimmedMean(RobustLocation):
    def __init__(self, beta=0.1):
        self.beta = beta

    def _locate(self, X):
        return classical.coord_trimmed_mean(X, self.beta)


class GeometricMedian(RobustLocation):
    def __init__(self, tol=1e-10, max_iter=10_000):
        self.tol = tol
        self.max_iter = max_iter

    def _locate(self, X):
        y, it, conv = classical.weiszfeld(X, self.tol, self.max_iter)
        self.converged_, self.n_iter_ = conv, it
        return y


class Krum(RobustLocation):
    def __init__(self, f=0):
        self.f = f

    def _locate(self, X):
        self.selected_index_ = classical.krum_index(X, self.f) if X.shape[0] >= self.f + 3 else None
        return classical.krum(X, self.f)


class Bulyan(RobustLocation):
    def __init__(self, f=0, inner="krum"):
        self.f = f
        self.inner = inner

    def _locate(self, X):
        self.selected_indices_ = classical.bulyan_selection(X, self.f, self.inner)
        return classical._trim_rows(X[self.selected_indices_], self.f)


class Filtering(RobustLocation):
    """Spectral filtering with a fixed termination threshold ``xi``.

    If ``xi`` is None it is derived from ``threshold`` with ``sigma`` as the
    per-row covariance bound.
    """

    def __init__(self, xi=None, epsilon=0.1, sigma=1.0, threshold="eq2", delta=0.1,
                 max_iter=None, interval_size=None, random_state=None):
        self.xi = xi
        self.epsilon = epsilon
        self.sigma = sigma
        self.threshold = threshold
        self.delta = delta
        self.max_iter = max_iter
        self.interval_size = interval_size
        self.random_state = random_state

    def _locate(self, X):
        if self.interval_size is not None or self.xi is None:
            cfg = EstimatorConfig(
                kind="filtering", epsilon=self.epsilon, xi=self.xi,
                threshold=None if self.xi is not None else self.threshold,
                sigma=self.sigma, delta=self.delta, max_iter=self.max_iter,
                interval_size=self.interval_size,
            )
            res = aggregate_with_info(cfg, X, _rng(self.random_state, "filtering"))
            self._set_info(res)
            return res.value
        res = filtering(X, self.xi, max_iter=self.max_iter, rng=_rng(self.random_state, "filtering"))
        self.converged_, self.n_iter_, self.weights_ = res.converged, res.iterations, res.weights
        return res.mean


class NoRegret(RobustLocation):
    def __init__(self, epsilon=0.1, sigma2=1.0, xi=None, eta=0.5, threshold="eq1", delta=0.1,
                 max_iter=200, prefilter_c0=PREFILTER_C0, random_state=None):
        self.epsilon = epsilon
        self.sigma2 = sigma2
        self.xi = xi
        self.eta = eta
        self.threshold = threshold
        self.delta = delta
        self.max_iter = max_iter
        self.prefilter_c0 = prefilter_c0
        self.random_state = random_state

    def _locate(self, X):
        m, d = X.shape
        xi = self.xi
        if xi is None:
            xi = compute_threshold(self.threshold, self.epsilon, eta=self.eta, sigma=np.sqrt(self.sigma2),
                                   d=d, m=m, delta=self.delta).xi
        res = no_regret(X, self.epsilon, self.sigma2, xi, eta=self.eta, max_iter=self.max_iter,
                        prefilter_c0=self.prefilter_c0, rng=_rng(self.random_state, "no-regret"))
        self.converged_, self.n_iter_, self.weights_ = res.converged, res.iterations, res.weights
        return res.mean


class Bucketing(RobustLocation):
    """Average within random buckets, then run ``inner`` on the bucket means."""

    def __init__(self, inner="filtering", k=None, epsilon=0.1, sigma=1.0, xi=None, delta=0.1,
                 interval_size=None, random_state=None):
        self.inner = inner
        self.k = k
        self.epsilon = epsilon
        self.sigma = sigma
        self.xi = xi
        self.delta = delta
        self.interval_size = interval_size
        self.random_state = random_state

    def _locate(self, X):
        cfg = EstimatorConfig(kind="bucketing", inner=self.inner, k=self.k, epsilon=self.epsilon,
                              sigma=self.sigma, xi=self.xi, delta=self.delta,
                              interval_size=self.interval_size)
        res = bucketed_aggregate_with_info(cfg, X, _rng(self.random_state, "bucketing"))
        self._set_info(res)
        return res.value


class ConfiguredAggregator(RobustLocation):
    """Any rule described by an :class:`EstimatorConfig`."""

    def __init__(self, config=None, random_state=None):
        self.config = config
        self.random_state = random_state

    def _locate(self, X):
        cfg = self.config if self.config is not None else EstimatorConfig()
        res = aggregate_with_info(cfg, X, _rng(self.random_state, cfg.kind))
        self._set_info(res)
        return res.value
