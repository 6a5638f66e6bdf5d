"""Numeric substrate: tensors, reverse-mode gradients, FFT, convolution, RNG."""

from .functional import dilated_conv1d, dilated_conv1d_np, layer_norm, linear, pinball
from .gradcheck import analytic_gradient, grad_check, numerical_gradient, relative_error
from .nn import MLP, Adam, Linear, Module, glorot
from .rng import RngStream, gumbel_draw, gumbel_from_uniform
from .spectral import dft_naive, fft_1d, ifft_1d, rfft_1d
from .tensor import (
    NEG_INF,
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    gelu,
    get_default_dtype,
    getitem,
    log,
    matmul,
    mean,
    mul,
    pad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    softmax_np,
    softplus,
    sqrt,
    stack,
    straight_through,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
    where,
)
