"""Granger-causality F test."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import f as f_dist


class RankDeficiencyWarning(RuntimeWarning):
    pass


def _lagged(v, p):
    n = len(v)
    return np.column_stack([v[p - i : n - i] for i in range(1, p + 1)])


def _rss(design, target, ridge):
    if ridge:
        a = design.T @ design + ridge * np.eye(design.shape[1])
        beta = np.linalg.solve(a, design.T @ target)
    else:
        beta = np.linalg.lstsq(design, target, rcond=None)[0]
    resid = target - design @ beta
    return float(resid @ resid)


def granger_screen(x, y, p: int = 2):
    """F statistic and p-value for "lags of x help predict y" at lag order ``p``.

    Restricted model: y on an intercept and its own ``p`` lags. Unrestricted:
    additionally ``p`` lags of x. A rank-deficient design is solved with a
    1e-8 ridge and a :class:`RankDeficiencyWarning`.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = len(y)
    if len(x) != n:
        raise ValueError("x and y must have equal length")
    if n <= 10 * p:
        raise ValueError(f"series length {n} must exceed 10*p = {10 * p}")
    target = y[p:]
    ones = np.ones((n - p, 1))
    restricted = np.hstack([ones, _lagged(y, p)])
    full = np.hstack([restricted, _lagged(x, p)])
    ridge = 0.0
    if np.linalg.matrix_rank(full) < full.shape[1]:
        warnings.warn("rank-deficient Granger design; applying 1e-8 ridge", RankDeficiencyWarning, stacklevel=2)
        ridge = 1e-8
    rss_r = _rss(restricted, target, ridge)
    rss_u = _rss(full, target, ridge)
    dof = n - p - full.shape[1]
    stat = ((rss_r - rss_u) / p) / max(rss_u / dof, 1e-300)
    stat = max(stat, 0.0)
    return float(stat), float(f_dist.sf(stat, p, dof))
