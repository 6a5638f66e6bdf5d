"""Windowing and cluster-stratified chronological splitting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SUPPORTED_HORIZONS = (24, 36, 48, 60, 96, 192, 336, 720)


@dataclass
class SplitSpec:
    ratios: tuple = (0.70, 0.15, 0.15)
    cluster_count: int = 4
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ValueError(f"split ratios must be three non-negative fractions summing to 1, got {self.ratios}")
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be >= 1")


@dataclass
class LabelWindow:
    input_len: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        if self.input_len < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError("input_len, horizon and stride must be positive")

    def starts(self, length: int) -> np.ndarray:
        last = length - self.input_len - self.horizon
        if last < 0:
            raise ValueError(f"series of length {length} too short for L={self.input_len}, H={self.horizon}")
        return np.arange(0, last + 1, self.stride)


def make_windows(values, starts, input_len: int, horizon: int):
    """Inputs ``B x L x N`` and labels ``B x H x N`` (the next H true values)."""
    v = np.asarray(values, float)
    idx = np.asarray(starts)[:, None] + np.arange(input_len + horizon)[None, :]
    win = v[idx]
    return win[:, :input_len], win[:, input_len:]


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(1))
    return np.array(centers)


def _lloyd(x, centers, max_iter):
    labels = None
    for _ in range(max_iter):
        d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = d.argmin(1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(0)
    return labels, centers


def kmeans(x, k: int, seed: int = 0, max_iter: int = 50) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; labels are relabelled 0..k'-1.

    An empty cluster triggers one re-seed; if it persists the empty cluster is
    dropped, which merges nothing because it owns no points.
    """
    x = np.asarray(x, float).reshape(len(x), -1)
    rng = np.random.default_rng(seed)
    labels, _ = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
    if len(np.unique(labels)) < k:
        labels, _ = _lloyd(x, _kmeans_pp(x, k, np.random.default_rng(seed + 7919)), max_iter)
        if len(np.unique(labels)) < k:
            warnings.warn("k-means left a cluster empty after re-seeding; merging", RuntimeWarning, stacklevel=2)
    _, labels = np.unique(labels, return_inverse=True)
    return labels


def _apportion(sizes, total):
    """Integer shares of ``total`` proportional to ``sizes`` (largest remainder)."""
    sizes = np.asarray(sizes, float)
    if sizes.sum() == 0:
        return np.zeros(len(sizes), int)
    quota = sizes * total / sizes.sum()
    base = np.floor(quota).astype(int)
    base = np.minimum(base, sizes.astype(int))
    order = np.argsort(-(quota - base), kind="stable")
    short = total - base.sum()
    for i in order:
        if short <= 0:
            break
        if base[i] < sizes[i]:
            base[i] += 1
            short -= 1
    return base


def stratified_split(windows, spec: SplitSpec = SplitSpec()):
    """Split window indices into train/val/test, stratified by k-means cluster.

    Each cluster contributes its earliest windows to train, then val, then
    test. Subset totals equal ``round(ratio * n)`` exactly; per-cluster counts
    are apportioned by largest remainder. Returns ``(train, val, test,
    labels)``.
    """
    x = np.asarray(windows, float).reshape(len(windows), -1)
    n = len(x)
    if n < spec.cluster_count * 10:
        raise ValueError(f"need at least {spec.cluster_count * 10} windows for {spec.cluster_count} clusters, got {n}")
    labels = np.zeros(n, int) if spec.cluster_count == 1 else kmeans(x, spec.cluster_count, spec.seed)
    n_train = int(round(spec.ratios[0] * n))
    n_val = int(round(spec.ratios[1] * n))
    n_val = min(n_val, n - n_train)
    clusters = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    sizes = np.array([len(c) for c in clusters])
    tr = _apportion(sizes, n_train)
    va = _apportion(sizes - tr, n_val)
    train, val, test = [], [], []
    for members, a, b in zip(clusters, tr, va):
        train.extend(members[:a])
        val.extend(members[a : a + b])
        test.extend(members[a + b :])
    return np.sort(train), np.sort(val), np.sort(test), labels


def subset_deviation(windows, subsets) -> list:
    """Per-subset distance of mean and covariance from the pooled statistics."""
    x = np.asarray(windows, float)
    x = x.reshape(-1, x.shape[-1]) if x.ndim == 3 else x
    pooled_m, pooled_c = x.mean(0), np.atleast_2d(np.cov(x, rowvar=False))
    out = []
    w = np.asarray(windows, float)
    for idx in subsets:
        s = w[idx].reshape(-1, w.shape[-1]) if w.ndim == 3 else w[idx]
        if len(s) < 2:
            out.append({"mean_dev": float("nan"), "cov_dev": float("nan")})
            continue
        out.append(
            {
                "mean_dev": float(np.abs(s.mean(0) - pooled_m).max()),
                "cov_dev": float(np.abs(np.atleast_2d(np.cov(s, rowvar=False)) - pooled_c).max()),
            }
        )
    return out
