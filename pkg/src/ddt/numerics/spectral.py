"""Unitary discrete Fourier transform helpers."""

from __future__ import annotations

import numpy as np


def fft_1d(series) -> np.ndarray:
    """Spectrum ``X_k = T**-0.5 * sum_t x_t exp(-2j pi k t / T)`` along the last axis."""
    x = np.asarray(series, dtype=float)
    if x.shape[-1] < 1:
        raise ValueError("fft_1d: need at least one sample")
    return np.fft.fft(x, axis=-1, norm="ortho")


def ifft_1d(spectrum) -> np.ndarray:
    """Inverse of :func:`fft_1d`, real part."""
    return np.fft.ifft(np.asarray(spectrum), axis=-1, norm="ortho").real


def rfft_1d(series) -> np.ndarray:
    """One-sided unitary spectrum, ``T//2 + 1`` bins."""
    return np.fft.rfft(np.asarray(series, dtype=float), axis=-1, norm="ortho")


def dft_naive(series) -> np.ndarray:
    x = np.asarray(series, dtype=complex)
    n = x.shape[-1]
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for t in range(n):
            out[k] += x[t] * np.exp(-2j * np.pi * k * t / n)
    return out / np.sqrt(n)
