"""Synthetic multichannel series for self-contained experiments."""

from __future__ import annotations

import numpy as np

HOUR = 3600.0
START = 1_467_331_200.0  # 2016-07-01 00:00 UTC, the ETT start date


def synthetic_series(length: int = 2000, n_channels: int = 4, seed: int = 0, noise: float = 0.3):
    """AR(2) dynamics plus daily and weekly cycles, cross-channel coupling and
    heteroscedastic noise, sampled hourly.

    Returns ``(timestamps, values)`` with ``values`` of shape ``length x n_channels``.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    phase = rng.uniform(0, 2 * np.pi, size=n_channels)
    amp_day = rng.uniform(1.0, 2.0, size=n_channels)
    amp_week = rng.uniform(0.3, 0.8, size=n_channels)
    seasonal = amp_day * np.sin(2 * np.pi * t[:, None] / 24.0 + phase) + amp_week * np.sin(
        2 * np.pi * t[:, None] / 168.0 + phase / 2
    )
    ar = np.zeros((length, n_channels))
    coupling = 0.25 * rng.standard_normal((n_channels, n_channels)) / np.sqrt(n_channels)
    np.fill_diagonal(coupling, 0.0)
    for i in range(2, length):
        scale = noise * (1.0 + 0.5 * np.abs(np.sin(2 * np.pi * i / 24.0)))
        ar[i] = 0.6 * ar[i - 1] - 0.2 * ar[i - 2] + coupling @ ar[i - 1] + scale * rng.standard_normal(n_channels)
    # channel n also carries a lagged copy of channel n-1's cycle
    lagged = np.roll(seasonal, 1, axis=1) * 0.3
    values = 10.0 + seasonal + lagged + ar
    return START + t * HOUR, values


def spike_fixture(length: int = 2400, n_channels: int = 2, rate: float = 0.01, magnitude: float = 6.0, seed: int = 0):
    """Smooth seasonal channels with injected single-sample spikes.

    Returns ``(values, spike_mask)``; spike signs are random and magnitudes are
    ``magnitude`` times the channel's seasonal amplitude.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    values = np.sin(2 * np.pi * t[:, None] / 24.0 + rng.uniform(0, 2 * np.pi, n_channels))
    values += 0.1 * rng.standard_normal(values.shape)
    mask = np.zeros(values.shape, bool)
    n_spikes = int(round(rate * length))
    for c in range(n_channels):
        idx = rng.choice(length, size=n_spikes, replace=False)
        mask[idx, c] = True
        values[idx, c] += rng.choice([-1.0, 1.0], size=n_spikes) * magnitude
    return values, mask
