"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(fn: Callable[..., float], point: Sequence[np.ndarray], eps: float = 1e-5):
    point = [np.array(p, dtype=np.float64) for p in point]
    grads = []
    for arr in point:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*point)
            flat[i] = orig - eps
            lo = fn(*point)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def analytic_gradient(op: Callable[..., Tensor], point: Sequence[np.ndarray]):
    leaves = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in point]
    out = op(*leaves)
    out.backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


def relative_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(op: Callable[..., Tensor], point: Sequence[np.ndarray], eps: float = 1e-5, numeric_op=None) -> float:
    """Max elementwise relative error between autodiff and central differences.

    ``op`` maps leaf tensors to a scalar tensor. ``numeric_op``, if given, is
    the forward used for the finite differences (defaults to ``op``).
    """
    numeric_op = numeric_op or op
    analytic = analytic_gradient(op, point)
    numeric = numerical_gradient(lambda *xs: numeric_op(*[Tensor(x) for x in xs]).item(), point, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
