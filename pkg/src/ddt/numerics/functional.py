"""Composite differentiable ops built from the tensor primitives."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, concat, getitem, matmul, pad, tsum, where


def dilated_conv1d(x, kernel, bias=None, dilation: int = 1, causal: bool = False):
    """1-D convolution along axis 1 of a ``B x L x C_in`` tensor.

    ``kernel`` has shape ``k x C_in x C_out`` with ``k`` odd. Tap ``j`` reads
    offset ``(j - (k-1)/2) * dilation`` in same-padding mode; with
    ``causal=True`` the taps read offsets ``(j - (k-1)) * dilation`` so the
    output at ``t`` never depends on inputs after ``t``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or x.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise ShapeError("dilated_conv1d", x.shape, kernel.shape)
    k, c_in, c_out = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"dilated_conv1d: kernel size must be odd, got {k}")
    length = x.shape[1]
    span = (k - 1) * dilation
    if causal:
        widths = ((0, 0), (span, 0), (0, 0))
    else:
        widths = ((0, 0), (span // 2, span // 2), (0, 0))
    xp = pad(x, widths) if span else x
    taps = [getitem(xp, (slice(None), slice(j * dilation, j * dilation + length), slice(None))) for j in range(k)]
    cols = taps[0] if k == 1 else concat(taps, axis=-1)
    out = matmul(cols, kernel.reshape(k * c_in, c_out))
    if bias is not None:
        out = out + bias
    return out


def dilated_conv1d_np(x, kernel, bias=None, dilation=1, causal=False):
    """Direct-summation reference for :func:`dilated_conv1d`."""
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    b, length, _ = x.shape
    k, _, c_out = kernel.shape
    out = np.zeros((b, length, c_out))
    for t in range(length):
        for j in range(k):
            off = (j - (k - 1)) * dilation if causal else (j - (k - 1) // 2) * dilation
            s = t + off
            if 0 <= s < length:
                out[:, t, :] += x[:, s, :] @ kernel[j]
    if bias is not None:
        out += bias
    return out


def layer_norm(x, gamma=None, beta=None, axes=(-1,), eps: float = 1e-5):
    """Normalize over ``axes`` then apply an optional affine map."""
    x = as_tensor(x)
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    out = centered * ((var + eps) ** -0.5)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def linear(x, weight, bias=None):
    out = matmul(as_tensor(x), weight)
    if bias is not None:
        out = out + bias
    return out


def pinball(yhat, y, q):
    """Elementwise pinball loss ``max(q*u, (q-1)*u)`` with ``u = y - yhat``."""
    u = as_tensor(y) - yhat
    pos = u.data >= 0
    return where(pos, u * q, u * (q - 1.0))


def mse(a, b) -> Tensor:
    d = as_tensor(a) - b
    return (d * d).mean()


def total(x) -> Tensor:
    return tsum(x)
