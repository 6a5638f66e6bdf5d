"""Noise and anomaly screening: local outlier factor and GEV/boxplot filtering."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import genextreme
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted


def lof_scores(points, k: int) -> np.ndarray:
    """Local outlier factor of every row of ``points`` (M x d) with ``k`` neighbours.

    Neighbourhoods hold exactly ``k`` points (ties broken by index). Zero
    reachability means are floored at 1e-12 so duplicated points stay finite.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if not 1 <= k < m:
        raise ValueError(f"lof_scores: need 1 <= k < M, got k={k}, M={m}")
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    kdist = d[np.arange(m)[:, None], nbrs][:, -1]
    reach = np.maximum(kdist[nbrs], d[np.arange(m)[:, None], nbrs])
    lrd = 1.0 / np.maximum(reach.mean(1), 1e-12)
    return lrd[nbrs].mean(1) / lrd


class LOFDetector(OutlierMixin, BaseEstimator):
    """Flags rows whose local outlier factor exceeds ``threshold``."""

    def __init__(self, n_neighbors=20, threshold=1.5):
        self.n_neighbors = n_neighbors
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X)
        self.scores_ = lof_scores(X, min(self.n_neighbors, X.shape[0] - 1))
        self.outliers_ = self.scores_ > self.threshold
        return self

    def fit_predict(self, X, y=None):
        self.fit(X)
        return np.where(self.outliers_, -1, 1)


def boxplot_bounds(values, whisker: float = 1.5):
    """Lower and upper whisker ends, or None when the IQR is zero."""
    q1, q3 = np.percentile(np.asarray(values, dtype=float), [25, 75])
    iqr = q3 - q1
    if iqr <= 0:
        return None
    return q1 - whisker * iqr, q3 + whisker * iqr


def boxplot_flags(values, whisker: float = 1.5) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    bounds = boxplot_bounds(x, whisker)
    if bounds is None:
        return np.zeros(x.shape, dtype=bool)
    return (x < bounds[0]) | (x > bounds[1])


def gev_threshold(values, alpha: float, block: int):
    """Upper ``1 - alpha`` quantile of a GEV fitted to block maxima, or None if the fit fails."""
    x = np.asarray(values, dtype=float)
    n_blocks = len(x) // block
    if n_blocks < 10:
        return None
    maxima = x[: n_blocks * block].reshape(n_blocks, block).max(1)
    if np.ptp(maxima) == 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            c, loc, scale = genextreme.fit(maxima)
        except Exception:  # scipy raises a grab-bag of optimizer errors
            return None
    q = genextreme.ppf(1.0 - alpha, c, loc=loc, scale=scale)
    if not np.isfinite(q) or scale <= 0:
        return None
    return float(q)


class GEVBoxplotFilter(BaseEstimator):
    """Remove a value only when both the GEV tail rule and the IQR rule flag it.

    Both tails are screened: maxima of ``x`` and of ``-x`` each get their own
    GEV fit. When a fit fails the boxplot rule acts alone and the failure is
    recorded in ``warnings_``.
    """

    def __init__(self, alpha=0.01, block_size=24, whisker=1.5):
        self.alpha = alpha
        self.block_size = block_size
        self.whisker = whisker

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=float).reshape(-1)
        self.warnings_ = []
        self.box_ = boxplot_bounds(x, self.whisker)
        if len(x) < 30:
            self.warnings_.append("fewer than 30 samples; boxplot-only")
            self.upper_ = self.lower_ = None
        else:
            self.upper_ = gev_threshold(x, self.alpha, self.block_size)
            neg = gev_threshold(-x, self.alpha, self.block_size)
            self.lower_ = None if neg is None else -neg
            if self.upper_ is None or self.lower_ is None:
                self.warnings_.append("GEV fit did not converge; boxplot-only")
        return self

    def flags(self, X) -> np.ndarray:
        check_is_fitted(self, "warnings_")
        x = np.asarray(X, dtype=float).reshape(-1)
        if self.box_ is None:
            box = np.zeros(x.shape, dtype=bool)
        else:
            box = (x < self.box_[0]) | (x > self.box_[1])
        if self.upper_ is None or self.lower_ is None:
            return box
        tail = (x > self.upper_) | (x < self.lower_)
        return box & tail

    def keep_mask(self, X) -> np.ndarray:
        return ~self.flags(X)


def gev_boxplot_filter(values, alpha: float = 0.01, block_size: int = 24):
    """Keep-mask for one channel plus any fallback warnings."""
    f = GEVBoxplotFilter(alpha=alpha, block_size=block_size).fit(values)
    for w in f.warnings_:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return f.keep_mask(values), f.warnings_
