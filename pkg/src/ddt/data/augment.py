"""Augmentation: monotone time warping, log-space scaling, SNR-bounded noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dtw_distance(a, b, window: int | None = None) -> float:
    """Dynamic time warping cost with absolute/Euclidean local cost.

    ``window`` is the Sakoe-Chiba band half-width (None means unconstrained).
    Inputs are ``L`` or ``L x N``.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    n, m = len(a), len(b)
    w = max(n, m) if window is None else max(window, abs(n - m))
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo, hi = max(1, i - w), min(m, i + w)
        for j in range(lo, hi + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def warp_path(length: int, rng: np.random.Generator, max_stretch: float = 1.2, knots: int = 4) -> np.ndarray:
    """Smooth increasing map from output index to (fractional) source index.

    Local speed stays within ``[1/max_stretch, max_stretch]`` and the path
    runs from 0 to ``length - 1``.
    """
    if length < 2 or max_stretch <= 1.0:
        return np.arange(length, dtype=float)
    log_s = np.log(max_stretch)
    anchor = rng.uniform(-log_s, log_s, size=knots + 2)
    speed = np.exp(np.interp(np.linspace(0, knots + 1, length - 1), np.arange(knots + 2), anchor))
    # rescale only the speeds not pinned at a bound until the total length fits
    lo, hi = 1.0 / max_stretch, max_stretch
    target = float(length - 1)
    speed *= target / speed.sum()
    for _ in range(50):
        speed = np.clip(speed, lo, hi)
        excess = target - speed.sum()
        if abs(excess) < 1e-12:
            break
        free = speed < hi if excess > 0 else speed > lo
        speed[free] *= 1.0 + excess / speed[free].sum()
    return np.concatenate([[0.0], np.cumsum(speed)])


def apply_warp(series, path) -> np.ndarray:
    x = np.asarray(series, float)
    src = np.arange(len(x), dtype=float)
    if x.ndim == 1:
        return np.interp(path, src, x)
    return np.stack([np.interp(path, src, x[:, n]) for n in range(x.shape[1])], axis=1)


def dtw_warp(series, rng, max_stretch: float = 1.2) -> np.ndarray:
    return apply_warp(series, warp_path(len(series), rng, max_stretch))


def log_scale(series, rng, max_scale: float = 1.1, offset_frac: float = 0.02) -> np.ndarray:
    """Multiply by ``exp(u)``, ``u ~ U[-log s, log s]``, then add an offset within ``offset_frac * std``."""
    x = np.asarray(series, float)
    u = rng.uniform(-np.log(max_scale), np.log(max_scale))
    std = x.std(axis=0)
    offset = rng.uniform(-offset_frac, offset_frac, size=std.shape) * std
    return x * np.exp(u) + offset


def snr_noise_variance(series, snr_db: float) -> np.ndarray:
    """Per-channel noise variance giving the requested signal-to-noise ratio."""
    x = np.asarray(series, float)
    power = (x * x).mean(axis=0)
    return power / 10.0 ** (snr_db / 10.0)


def snr_noise(series, rng, snr_db: float = 20.0) -> np.ndarray:
    x = np.asarray(series, float)
    sd = np.sqrt(snr_noise_variance(x, snr_db))
    return x + rng.standard_normal(x.shape) * sd


@dataclass
class AugmentSpec:
    dtw_warp: bool = True
    log_scale: bool = True
    snr_noise: bool = True
    max_stretch: float = 1.2
    max_scale: float = 1.1
    snr_db: float = 20.0
    copies: int = 1


def augment(series, spec: AugmentSpec, rng: np.random.Generator) -> list:
    """``spec.copies`` augmented versions of ``series`` (``L`` or ``L x N``)."""
    out = []
    for _ in range(spec.copies):
        x = np.array(series, float)
        if spec.dtw_warp:
            x = dtw_warp(x, rng, spec.max_stretch)
        if spec.log_scale:
            x = log_scale(x, rng, spec.max_scale)
        if spec.snr_noise:
            x = snr_noise(x, rng, spec.snr_db)
        out.append(x)
    return out
