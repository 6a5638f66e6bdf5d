"""Temporal and channel experts with gated fusion."""

from __future__ import annotations

import numpy as np

from .numerics import MLP, Linear, Module, Parameter, Tensor, as_tensor, broadcast_to, concat, matmul, sigmoid, softmax
from .numerics.functional import dilated_conv1d
from .numerics.nn import glorot

KERNEL_SIZES = (1, 3, 5)


class TemporalExpert(Module):
    """``sum_k DConv_k(Z) * sigmoid(GDConv_k(Z))`` along the token axis, dilation = k."""

    def __init__(self, d: int, rng, kernel_sizes=KERNEL_SIZES, causal: bool = True):
        self.kernel_sizes = tuple(kernel_sizes)
        self.causal = causal
        self.conv = [Parameter(glorot(rng, k * d, d, (k, d, d))) for k in self.kernel_sizes]
        self.conv_b = [Parameter(np.zeros(d)) for _ in self.kernel_sizes]
        self.gate = [Parameter(glorot(rng, k * d, d, (k, d, d))) for k in self.kernel_sizes]
        self.gate_b = [Parameter(np.zeros(d)) for _ in self.kernel_sizes]

    def __call__(self, z):
        z = as_tensor(z)
        out = None
        for k, w, b, gw, gb in zip(self.kernel_sizes, self.conv, self.conv_b, self.gate, self.gate_b):
            branch = dilated_conv1d(z, w, b, dilation=k, causal=self.causal)
            gate = sigmoid(dilated_conv1d(z, gw, gb, dilation=k, causal=self.causal))
            term = branch * gate
            out = term if out is None else out + term
        return out


class ChannelExpert(Module):
    """Learned adjacency between channel slices of the token state.

    ``D`` is cut into ``N`` contiguous slices ``z_i``; a two-layer scorer on
    ``[z_i; z_j; dt_ij]`` gives ``A_ij``, softmaxed over ``j``, and slice ``i``
    of the output is ``sum_j A_ij * V(z_j)``. ``dt_ij`` is zero for aligned
    sampling.
    """

    def __init__(self, d: int, n_channels: int, rng):
        if d % n_channels:
            raise ValueError(f"model width {d} not divisible by channel count {n_channels}")
        self.n = n_channels
        self.dc = d // n_channels
        self.scorer = MLP(2 * self.dc + 1, max(self.dc, 4), 1, rng)
        self.value = Linear(self.dc, self.dc, rng)

    def adjacency(self, z, dt=None) -> Tensor:
        z = as_tensor(z)
        b, p, _ = z.shape
        n, dc = self.n, self.dc
        s = z.reshape(b, p, n, dc)
        zi = broadcast_to(s.reshape(b, p, n, 1, dc), (b, p, n, n, dc))
        zj = broadcast_to(s.reshape(b, p, 1, n, dc), (b, p, n, n, dc))
        dt = np.zeros((b, p, n, n, 1)) if dt is None else np.broadcast_to(np.asarray(dt, float)[..., None], (b, p, n, n, 1))
        pair = concat([zi, zj, Tensor(dt)], axis=-1)
        scores = self.scorer(pair).reshape(b, p, n, n)
        return softmax(scores, axis=-1)

    def __call__(self, z, dt=None):
        z = as_tensor(z)
        b, p, d = z.shape
        a = self.adjacency(z, dt)
        vals = self.value(z.reshape(b, p, self.n, self.dc))
        return matmul(a, vals).reshape(b, p, d)


def causal_mean(z) -> Tensor:
    """Running mean over the token axis: row ``p`` averages tokens ``0..p``."""
    z = as_tensor(z)
    p = z.shape[1]
    weights = np.tril(np.ones((p, p))) / np.arange(1, p + 1)[:, None]
    return matmul(Tensor(weights), z)


class FusionGate(Module):
    """``g = sigmoid(MLP2(GELU(MLP1(Z_bar))))``, one value per feature."""

    def __init__(self, d: int, rng):
        self.mlp = MLP(d, d, d, rng)

    def __call__(self, context) -> Tensor:
        return sigmoid(self.mlp(context))


def fuse_experts(h_t, h_c, z, gate: FusionGate, causal: bool = True):
    """``g * h_t + (1 - g) * h_c + Z``.

    The context is the mean over all tokens (one gate per batch and feature)
    when ``causal`` is False, and the running mean up to each token otherwise,
    which keeps every output token free of later inputs.
    """
    z = as_tensor(z)
    context = causal_mean(z) if causal else z.mean(axis=1, keepdims=True)
    g = gate(context)
    return g * h_t + (1.0 - g) * h_c + z


class DualExpert(Module):
    """Temporal and (optionally) channel experts merged by the fusion gate plus skip.

    Without the channel expert the layer reduces to ``h_t + Z``.
    """

    def __init__(self, d: int, n_channels: int, rng_t, rng_c, use_channel: bool = True, causal: bool = True):
        self.causal = causal
        self.temporal = TemporalExpert(d, rng_t, causal=causal)
        self.channel = ChannelExpert(d, n_channels, rng_c) if use_channel else None
        self.gate = FusionGate(d, rng_c) if use_channel else None

    def __call__(self, z):
        z = as_tensor(z)
        h_t = self.temporal(z)
        if self.channel is None:
            return h_t + z
        return fuse_experts(h_t, self.channel(z), z, self.gate, causal=self.causal)
