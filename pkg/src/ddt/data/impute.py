"""Gaussian-process gap filling."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

# observed points farther than this many lengthscales from a gap are ignored
_REACH = 8.0
_MAX_EXACT = 400


def rbf(a, b, lengthscale: float, signal_var: float) -> np.ndarray:
    d = np.asarray(a, float)[:, None] - np.asarray(b, float)[None, :]
    return signal_var * np.exp(-0.5 * (d / lengthscale) ** 2)


def _factor(k):
    try:
        return cho_factor(k, lower=True)
    except LinAlgError:
        pass
    try:
        return cho_factor(k + 1e-8 * np.eye(len(k)), lower=True)
    except LinAlgError:
        raise LinAlgError("GP kernel matrix singular even after 1e-8 jitter") from None


def gp_posterior(t_obs, y_obs, t_new, lengthscale, noise_var, signal_var=None, prior_mean=None):
    """Posterior mean and latent variance at ``t_new`` under a constant-mean RBF prior."""
    t_obs, y_obs = np.asarray(t_obs, float), np.asarray(y_obs, float)
    mu = float(np.mean(y_obs)) if prior_mean is None else prior_mean
    sv = float(np.var(y_obs)) if signal_var is None else signal_var
    sv = max(sv, 1e-12)
    k = rbf(t_obs, t_obs, lengthscale, sv) + noise_var * np.eye(len(t_obs))
    fac = _factor(k)
    ks = rbf(t_new, t_obs, lengthscale, sv)
    mean = mu + ks @ cho_solve(fac, y_obs - mu)
    var = sv - np.einsum("ij,ji->i", ks, cho_solve(fac, ks.T))
    return mean, np.maximum(var, 0.0)


def impute_gp(series, lengthscale: float = 4.0, noise_var: float = 1e-4, signal_var=None):
    """Fill NaNs in each column of an ``L x N`` (or length-L) array.

    Returns ``(filled, variance)`` where ``variance`` is the posterior variance
    at filled positions and 0 elsewhere. Long series are solved locally around
    each gap using observations within a few lengthscales; the prior mean and
    variance always come from the whole channel.
    """
    x = np.array(series, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    var = np.zeros_like(x)
    t = np.arange(x.shape[0], dtype=float)
    for n in range(x.shape[1]):
        col = x[:, n]
        miss = np.isnan(col)
        if not miss.any():
            continue
        obs = ~miss
        if obs.sum() < 2:
            raise ValueError(f"channel {n}: need at least 2 observed points for GP imputation")
        mu = float(col[obs].mean())
        sv = float(col[obs].var()) if signal_var is None else signal_var
        if obs.sum() <= _MAX_EXACT:
            m, v = gp_posterior(t[obs], col[obs], t[miss], lengthscale, noise_var, sv, mu)
            col[miss], var[miss, n] = m, v
            continue
        reach = max(_REACH * lengthscale, 4.0)
        for start, stop in _runs(miss):
            near = obs & (t >= start - reach) & (t < stop + reach)
            idx = np.flatnonzero(near)
            if idx.size > _MAX_EXACT:
                idx = idx[np.argsort(np.minimum(np.abs(t[idx] - start), np.abs(t[idx] - stop + 1)))[:_MAX_EXACT]]
                idx.sort()
            tgt = t[start:stop]
            if idx.size == 0:
                col[start:stop], var[start:stop, n] = mu, sv
                continue
            m, v = gp_posterior(t[idx], col[idx], tgt, lengthscale, noise_var, sv, mu)
            col[start:stop], var[start:stop, n] = m, v
    if squeeze:
        return x[:, 0], var[:, 0]
    return x, var


def _runs(mask):
    """(start, stop) pairs of consecutive True entries."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))
