"""Standardization and the Wasserstein normality check."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Per-channel z-score over the last axis, population std.

    Channels whose std is 0 pass through unchanged and are listed in
    ``constant_``. Works on any array whose last axis is the channel axis.
    """

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        self.mean_ = np.nanmean(flat, axis=0)
        self.scale_ = np.nanstd(flat, axis=0)
        self.constant_ = self.scale_ == 0
        self.n_features_in_ = x.shape[-1]
        return self

    def _params(self):
        check_is_fitted(self, "mean_")
        mean = np.where(self.constant_, 0.0, self.mean_)
        scale = np.where(self.constant_, 1.0, self.scale_)
        return mean, scale

    def transform(self, X):
        mean, scale = self._params()
        return (np.asarray(X, dtype=float) - mean) / scale

    def inverse_transform(self, X):
        mean, scale = self._params()
        return np.asarray(X, dtype=float) * scale + mean


def zscore(series):
    """Standardize columns of ``series``; returns ``(z, mean, std, constant_flags)``."""
    s = ZScoreScaler().fit(series)
    return s.transform(series), s.mean_, s.scale_, s.constant_


def wasserstein_to_normal(sample) -> float:
    """W1 distance between an empirical sample and N(0, 1) on the quantile grid."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    n = len(x)
    grid = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return float(np.mean(np.abs(x - grid)))


def wasserstein_check(sample, threshold: float = 0.2):
    """``(distance, passed)``; requires at least 100 samples."""
    if np.size(sample) < 100:
        raise ValueError("wasserstein_check: need at least 100 samples")
    d = wasserstein_to_normal(sample)
    return d, d <= threshold
