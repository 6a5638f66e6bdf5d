"""Per-source embeddings and gated multivariate fusion."""

from __future__ import annotations

import math

import numpy as np

from .masking import build_causal_mask, masked_attention
from .numerics import MLP, Linear, Module, Parameter, Tensor, as_tensor, concat, gelu, sigmoid
from .numerics.functional import dilated_conv1d
from .numerics.nn import glorot


def check_embedding_width(d: int, n_channels: int) -> None:
    need = math.ceil(math.log2(n_channels)) if n_channels > 1 else 0
    if d < need:
        raise ValueError(f"embedding width {d} below ceil(log2 N) = {need}")


class EnergyEmbedding(Module):
    """Two kernel-3 causal convolutions, then single-head self-attention with a residual."""

    def __init__(self, n_in: int, d: int, rng, causal: bool = True):
        self.causal = causal
        self.k1 = Parameter(glorot(rng, 3 * n_in, d, (3, n_in, d)))
        self.b1 = Parameter(np.zeros(d))
        self.k2 = Parameter(glorot(rng, 3 * d, d, (3, d, d)))
        self.b2 = Parameter(np.zeros(d))
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)

    def __call__(self, x):
        x = as_tensor(x)
        h = gelu(dilated_conv1d(x, self.k1, self.b1, causal=True))
        h = dilated_conv1d(h, self.k2, self.b2, causal=True)
        mask = build_causal_mask(x.shape[1]) if self.causal else None
        return h + masked_attention(self.q(h), self.k(h), self.v(h), mask)


class CovariateEmbedding(MLP):
    """Two-layer map for one covariate source (weather or calendar features)."""

    def __init__(self, n_in: int, d: int, rng):
        super().__init__(n_in, d, d, rng)


class GatedFusion(Module):
    """``G * E_e + (1 - G) * MLP([E_e; E_w; E_t])`` with ``G = sigmoid(W_g [..] + b_g)``."""

    def __init__(self, d: int, rng):
        self.gate = Linear(3 * d, d, rng)
        self.mlp = MLP(3 * d, d, d, rng)

    def gate_values(self, e_e, e_w, e_t) -> Tensor:
        return sigmoid(self.gate(concat([e_e, e_w, e_t], axis=-1)))

    def __call__(self, e_e, e_w, e_t):
        cat = concat([e_e, e_w, e_t], axis=-1)
        g = sigmoid(self.gate(cat))
        return g * e_e + (1.0 - g) * self.mlp(cat)


def gated_fuse(e_e, e_w, e_t, fusion: GatedFusion):
    return fusion(e_e, e_w, e_t)


class InputEmbedding(Module):
    """Embeds target, weather and calendar channels and fuses them into ``B x L x D``.

    Absent sources contribute a zero tensor of the same width.
    """

    def __init__(self, n_target: int, n_weather: int, n_time: int, d: int, rng, causal: bool = True):
        check_embedding_width(d, n_target + n_weather)
        self.d = d
        self.energy = EnergyEmbedding(n_target, d, rng, causal=causal)
        self.weather = CovariateEmbedding(n_weather, d, rng) if n_weather else None
        self.time = CovariateEmbedding(n_time, d, rng) if n_time else None
        self.fusion = GatedFusion(d, rng)

    def embed_covariates(self, x_w, x_t, batch_shape):
        zeros = Tensor(np.zeros((*batch_shape, self.d)))
        e_w = self.weather(x_w) if self.weather is not None and x_w is not None else zeros
        e_t = self.time(x_t) if self.time is not None and x_t is not None else zeros
        return e_w, e_t

    def __call__(self, x_e, x_w=None, x_t=None):
        e_e = self.energy(x_e)
        e_w, e_t = self.embed_covariates(x_w, x_t, e_e.shape[:2])
        return self.fusion(e_e, e_w, e_t)
