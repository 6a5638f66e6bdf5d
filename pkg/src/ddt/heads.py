"""Forecast heads, quantile loss and point metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Linear, Module, Parameter, Tensor, as_tensor, concat, sigmoid, stack, tanh
from .numerics.functional import pinball
from .numerics.nn import glorot

QUANTILES = (0.1, 0.5, 0.9)
DIRECT_MAX_HORIZON = 96


@dataclass
class HeadConfig:
    horizon: int
    quantiles: tuple = QUANTILES
    mode: str = "auto"  # auto | direct | recursive
    teacher_forcing_ratio: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        q = np.asarray(self.quantiles, float)
        if q.size == 0 or np.any(q <= 0) or np.any(q >= 1) or np.any(np.diff(q) <= 0):
            raise ValueError(f"quantiles must be strictly increasing in (0, 1), got {self.quantiles}")
        if self.mode not in ("auto", "direct", "recursive"):
            raise ValueError(f"head mode must be auto, direct or recursive, got {self.mode!r}")
        if not 0.0 <= self.teacher_forcing_ratio <= 1.0:
            raise ValueError("teacher_forcing_ratio must lie in [0, 1]")

    @property
    def resolved_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        return "direct" if self.horizon <= DIRECT_MAX_HORIZON else "recursive"

    @property
    def overridden(self) -> bool:
        auto = "direct" if self.horizon <= DIRECT_MAX_HORIZON else "recursive"
        return self.mode != "auto" and self.mode != auto


@dataclass
class ForecastResult:
    yhat: np.ndarray  # B x H x N x Q
    quantiles: tuple = QUANTILES
    metrics: dict = field(default_factory=dict)

    @property
    def median(self) -> np.ndarray:
        return self.yhat[..., list(self.quantiles).index(0.5)] if 0.5 in self.quantiles else self.yhat[..., len(self.quantiles) // 2]


class DirectHead(Module):
    """Affine map from the flattened token states to ``H x N x Q``."""

    def __init__(self, n_tokens: int, d: int, cfg: HeadConfig, n_out: int, rng):
        if cfg.horizon > DIRECT_MAX_HORIZON and cfg.mode != "direct":
            raise ValueError(f"direct head needs H <= {DIRECT_MAX_HORIZON} unless explicitly forced, got {cfg.horizon}")
        self.cfg = cfg
        self.n_out = n_out
        self.proj = Linear(n_tokens * d, cfg.horizon * n_out * len(cfg.quantiles), rng)

    def __call__(self, encoding, **_):
        e = as_tensor(encoding)
        b = e.shape[0]
        return self.proj(e.reshape(b, -1)).reshape(b, self.cfg.horizon, self.n_out, len(self.cfg.quantiles))


class LSTMCell(Module):
    def __init__(self, n_in: int, d: int, rng):
        self.d = d
        self.w = Parameter(glorot(rng, n_in + d, 4 * d))
        bias = np.zeros(4 * d)
        bias[d : 2 * d] = 1.0  # forget gate
        self.b = Parameter(bias)

    def __call__(self, x, h, c):
        gates = concat([as_tensor(x), h], axis=-1) @ self.w + self.b
        d = self.d
        i = sigmoid(gates[..., :d])
        f = sigmoid(gates[..., d : 2 * d])
        o = sigmoid(gates[..., 2 * d : 3 * d])
        g = tanh(gates[..., 3 * d :])
        c = f * c + i * g
        return o * tanh(c), c


class RecursiveHead(Module):
    """LSTM unrolled over the horizon from the token-pooled encoding.

    Step ``s`` reads the previous median forecast, or with probability
    ``teacher_forcing_ratio`` during training the previous true value.
    """

    def __init__(self, d: int, cfg: HeadConfig, n_out: int, rng):
        self.cfg = cfg
        self.n_out = n_out
        self.cell = LSTMCell(n_out, d, rng)
        self.out = Linear(d, n_out * len(cfg.quantiles), rng)
        self.mid = len(cfg.quantiles) // 2 if 0.5 not in cfg.quantiles else list(cfg.quantiles).index(0.5)

    def step(self, y_prev, h, c):
        h, c = self.cell(y_prev, h, c)
        b = h.shape[0]
        return self.out(h).reshape(b, self.n_out, len(self.cfg.quantiles)), h, c

    def __call__(self, encoding, start=None, targets=None, teacher_forcing=0.0, rng=None, training=False):
        e = as_tensor(encoding)
        b = e.shape[0]
        if training and teacher_forcing > 0 and targets is None:
            raise ValueError("teacher forcing requested in training mode without targets")
        h = e.mean(axis=1)
        c = Tensor(np.zeros(h.shape))
        y_prev = Tensor(np.zeros((b, self.n_out)) if start is None else np.asarray(start, float))
        outs = []
        use_tf = training and teacher_forcing > 0
        coin = rng.uniform(size=self.cfg.horizon) if use_tf else None
        for s in range(self.cfg.horizon):
            yq, h, c = self.step(y_prev, h, c)
            outs.append(yq)
            if use_tf and coin[s] < teacher_forcing:
                y_prev = Tensor(np.asarray(targets, float)[:, s, :])
            else:
                y_prev = yq[:, :, self.mid]
        return stack(outs, axis=1)


def make_head(n_tokens: int, d: int, cfg: HeadConfig, n_out: int, rng):
    if cfg.resolved_mode == "direct":
        return DirectHead(n_tokens, d, cfg, n_out, rng)
    return RecursiveHead(d, cfg, n_out, rng)


def quantile_loss(yhat, y, quantiles=QUANTILES) -> Tensor:
    """Mean pinball loss over all elements and quantiles; ``yhat`` is ``... x Q``."""
    yhat = as_tensor(yhat)
    y = np.asarray(y, float)
    if yhat.shape[:-1] != y.shape or yhat.shape[-1] != len(quantiles):
        raise ValueError(f"quantile_loss: prediction shape {yhat.shape} does not match targets {y.shape} x {len(quantiles)}")
    q = np.asarray(quantiles, float)
    return pinball(yhat, y[..., None], q).mean()


def metrics(yhat_median, y):
    """``(MSE, MAE)`` over all elements."""
    a = np.asarray(yhat_median, float)
    b = np.asarray(y, float)
    if a.shape != b.shape:
        raise ValueError(f"metrics: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d)), float(np.mean(np.abs(d)))
