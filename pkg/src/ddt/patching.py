"""Patch extraction, temporal-aware normalization, positional codes and patch embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import MLP, Module, Parameter, Tensor, as_tensor, getitem, pad
from .numerics.functional import layer_norm


@dataclass(frozen=True)
class PatchConfig:
    patch_len: int = 16
    stride: int = 8

    def check(self, length: int) -> None:
        if not 1 <= self.stride <= self.patch_len:
            raise ValueError(f"need 1 <= stride <= patch_len, got S={self.stride}, K={self.patch_len}")
        if self.patch_len > length:
            raise ValueError(f"patch length {self.patch_len} exceeds series length {length}")

    def padded_length(self, length: int) -> int:
        extra = (length - self.patch_len) % self.stride
        return length if extra == 0 else length + self.stride - extra

    def n_patches(self, length: int) -> int:
        return (self.padded_length(length) - self.patch_len) // self.stride + 1

    def index(self, length: int) -> np.ndarray:
        """``P x K`` matrix of source time indices."""
        return np.arange(self.n_patches(length))[:, None] * self.stride + np.arange(self.patch_len)[None, :]


def extract_patches(x, cfg: PatchConfig):
    """``B x L x N`` -> ``(B x P x K x N, n_padded)``; the tail is zero-padded.

    Works on numpy arrays and on tensors (differentiably).
    """
    length = x.shape[1]
    cfg.check(length)
    n_pad = cfg.padded_length(length) - length
    idx = cfg.index(length)
    if isinstance(x, Tensor):
        xp = pad(x, ((0, 0), (0, n_pad), (0, 0))) if n_pad else x
        return getitem(xp, (slice(None), idx)), n_pad
    xp = np.pad(np.asarray(x), ((0, 0), (0, n_pad), (0, 0)))
    return xp[:, idx], n_pad


def unpatch(patches, cfg: PatchConfig, length: int) -> np.ndarray:
    """Overlap-average patches back onto the time axis, dropping the padded tail."""
    p = np.asarray(patches, float)
    b, n_p, k, n = p.shape
    total = cfg.padded_length(length)
    acc = np.zeros((b, total, n))
    count = np.zeros(total)
    idx = cfg.index(length)
    for j in range(n_p):
        acc[:, idx[j]] += p[:, j]
        count[idx[j]] += 1
    return (acc / count[None, :, None])[:, :length]


def t_layernorm(patches, gamma=None, beta=None, eps: float = 1e-12):
    """Normalize each patch jointly over its time and feature axes (the last two)."""
    return layer_norm(patches, gamma, beta, axes=(-2, -1), eps=eps)


def positional_encoding(n_patches: int, d_model: int) -> np.ndarray:
    """Sinusoidal codes whose wavelengths are spread geometrically over ``[2, 2P]``.

    Columns alternate ``sin, cos`` per frequency, so position 0 is ``0, 1, 0, 1, ...``.
    The longest wavelength scales with the patch count, keeping codes for
    short and long inputs over the same phase range.
    """
    if n_patches < 1:
        raise ValueError("positional_encoding: need at least one patch")
    n_freq = d_model // 2
    longest = 2.0 * n_patches
    if n_freq > 1:
        wavelengths = 2.0 * (longest / 2.0) ** (np.arange(n_freq) / (n_freq - 1))
    else:
        wavelengths = np.array([longest])
    angle = 2 * np.pi * np.arange(n_patches)[:, None] / wavelengths[None, :]
    pe = np.zeros((n_patches, d_model))
    pe[:, 0 : 2 * n_freq : 2] = np.sin(angle)
    pe[:, 1 : 2 * n_freq : 2] = np.cos(angle)
    return pe


def distance_bucket(distance) -> np.ndarray:
    """Log-spaced bucket of ``|i - j|``: 0, 1, 2, 3-4, 5-8, 9-16, ..."""
    d = np.abs(np.asarray(distance))
    out = np.zeros(d.shape, dtype=int)
    pos = d > 0
    out[pos] = 1 + np.ceil(np.log2(d[pos]) - 1e-12).astype(int)
    return out


def n_buckets(n_patches: int) -> int:
    return int(distance_bucket(max(n_patches - 1, 0))) + 1


class STMABias(Module):
    """Learned scalar per temporal-distance bucket, broadcast to a ``P x P`` bias."""

    def __init__(self, n_patches: int):
        self.n_patches = n_patches
        self.table = Parameter(np.zeros(n_buckets(n_patches)))
        pos = np.arange(n_patches)
        self.buckets = distance_bucket(pos[:, None] - pos[None, :])

    def __call__(self) -> Tensor:
        return getitem(self.table, self.buckets)


class BottleneckProjection(MLP):
    """Expand ``K*N -> 2*D_model`` with GELU, then contract to ``D_model``."""

    def __init__(self, d_in: int, d_model: int, rng):
        super().__init__(d_in, 2 * d_model, d_model, rng)


class PatchEmbedding(Module):
    """Patches -> T-LayerNorm -> flatten -> bottleneck -> plus positional codes."""

    def __init__(self, length: int, n_features: int, d_model: int, cfg: PatchConfig, rng):
        cfg.check(length)
        self.cfg = cfg
        self.length = length
        self.n_patches = cfg.n_patches(length)
        self.ln_gamma = Parameter(np.ones(n_features))
        self.ln_beta = Parameter(np.zeros(n_features))
        self.proj = BottleneckProjection(cfg.patch_len * n_features, d_model, rng)
        self.pe = positional_encoding(self.n_patches, d_model)

    def __call__(self, x):
        x = as_tensor(x)
        patches, _ = extract_patches(x, self.cfg)
        normed = t_layernorm(patches, self.ln_gamma, self.ln_beta)
        b, p, k, n = normed.shape
        return self.proj(normed.reshape(b, p, k * n)) + self.pe


def depth_for_length(length: int) -> int:
    return 2 if length < 128 else 3


def default_top_k(n_tokens: int) -> int:
    return max(1, math.ceil(n_tokens / 4))
