"""Causal, dynamic and fused attention masks.

The dynamic mask is sampled from a Gumbel-Softmax over negative Mahalanobis
distances between per-token spectral features, then hardened to Top-k per
row. Gradients reach the metric factor and sharpness through the relaxed
probabilities (straight-through).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    NEG_INF,
    Module,
    Parameter,
    RngStream,
    Tensor,
    as_tensor,
    gumbel_draw,
    log,
    matmul,
    rfft_1d,
    softmax,
    softplus,
    sqrt,
    straight_through,
    where,
)
from .numerics.tensor import tsum

EPS = 1e-8
MASK_MODES = ("dual", "causal", "dynamic", "none")


def build_causal_mask(length: int) -> np.ndarray:
    """``L x L`` additive mask: 0 where key time <= query time, ``NEG_INF`` otherwise."""
    if length < 1:
        raise ValueError("build_causal_mask: length must be >= 1")
    return np.where(np.tril(np.ones((length, length), bool)), 0.0, NEG_INF)


# ---------------------------------------------------------------- spectral features


def energy_weights(x) -> np.ndarray:
    """Channel weights proportional to each channel's L2 norm along time (axis -2)."""
    x = np.asarray(x, float)
    norms = np.sqrt((x * x).sum(axis=-2))
    total = norms.sum(axis=-1, keepdims=True)
    n = x.shape[-1]
    return np.where(total > 0, norms / np.where(total > 0, total, 1.0), 1.0 / n)


def spectral_features(x, window: int = 16) -> np.ndarray:
    """Per-timestep features for ``x`` of shape ``B x L x N`` (or ``L x N``).

    Feature ``t`` is ``x[t]`` followed by ``log(1 + |S_t|)`` where ``S_t`` is the
    one-sided unitary spectrum of the trailing window ``x[t-W+1 .. t]``,
    combined across channels with weights proportional to each channel's
    energy inside that window. The first ``W-1`` windows are padded by
    repeating the first sample, so nothing after ``t`` is ever read.
    Width: ``N + W//2 + 1``.
    """
    x = np.asarray(x, float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    b, length, n = x.shape
    if window > length:
        raise ValueError(f"spectral window {window} exceeds series length {length}")
    padded = np.concatenate([np.repeat(x[:, :1], window - 1, axis=1), x], axis=1)
    idx = np.arange(length)[:, None] + np.arange(window)[None, :]
    wins = padded[:, idx]  # B x L x W x N
    spec = rfft_1d(np.moveaxis(wins, -1, -2))  # B x L x N x F
    w = energy_weights(wins)  # B x L x N
    pooled = (w[..., None] * spec).sum(axis=-2)
    feats = np.concatenate([x, np.log1p(np.abs(pooled))], axis=-1)
    return feats[0] if squeeze else feats


def token_features(features, patch_len: int, stride: int, n_patches: int) -> np.ndarray:
    """Pick the feature vector at the last real timestep of every patch."""
    f = np.asarray(features)
    length = f.shape[-2]
    ends = np.minimum(np.arange(n_patches) * stride + patch_len - 1, length - 1)
    return f[..., ends, :]


# ---------------------------------------------------------------- metric


def temperature(tau0: float, gamma: float, epoch: int) -> float:
    return tau0 * gamma**epoch


class MetricState(Module):
    """Trainable Cholesky factor, sharpness and annealing schedule.

    The factor is lower-triangular with a softplus-positive diagonal, so
    ``A = L^T L`` is positive definite for every parameter value.
    """

    def __init__(self, dim: int, beta_init: float = 1.0, tau0: float = 1.0, gamma: float = 0.95, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.offdiag = Parameter(np.tril(0.01 * rng.standard_normal((dim, dim)), -1))
        # softplus(x) = 1 at x = log(e - 1)
        self.diag_raw = Parameter(np.full(dim, math.log(math.e - 1.0)))
        self.beta_raw = Parameter(np.array(math.log(math.expm1(beta_init))))
        self.tau0 = tau0
        self.gamma = gamma
        self.epoch = 0

    def factor(self) -> Tensor:
        lower = np.tril(np.ones((self.dim, self.dim)), -1)
        return self.offdiag * lower + softplus(self.diag_raw) * np.eye(self.dim)

    def metric(self) -> np.ndarray:
        f = self.factor().data
        return f.T @ f

    def beta(self) -> Tensor:
        return softplus(self.beta_raw)

    def temperature(self, epoch: int | None = None) -> float:
        return temperature(self.tau0, self.gamma, self.epoch if epoch is None else epoch)


def mahalanobis_matrix(features, factor) -> Tensor:
    """Pairwise ``||L (F_t - F_t')||`` over the second-to-last axis of ``features``."""
    f = as_tensor(features)
    diff = f.reshape(*f.shape[:-1], 1, f.shape[-1]) - f.reshape(*f.shape[:-2], 1, *f.shape[-2:])
    proj = matmul(diff, as_tensor(factor).transpose())
    return sqrt(tsum(proj * proj, axis=-1))


# ---------------------------------------------------------------- sampling


@dataclass
class DynamicMask:
    hard: np.ndarray  # {0,1}
    relaxed: Tensor  # P-hat
    mask: Tensor  # forward value = hard (or relaxed), gradient via relaxed
    k: int
    tau: float
    logits: np.ndarray


def _topk_hard(scores, allowed, k):
    length = scores.shape[-1]
    eye = np.eye(length, dtype=bool)
    n_allowed = allowed.sum(-1)
    n_sel = np.minimum(k, n_allowed)
    off = np.where(allowed & ~eye, scores, -np.inf)
    order = np.argsort(-off, axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    hard = (ranks < (n_sel - 1)[..., None]) & allowed & ~eye
    return (hard | eye).astype(float)


def sample_dynamic_mask(
    distances,
    state: MetricState,
    rng: RngStream | None,
    k: int,
    mode: str = "eval",
    causal: bool = True,
    relaxed_forward: bool = False,
) -> DynamicMask:
    """Gumbel-Softmax over ``-beta * d`` followed by per-row Top-k.

    Competition is restricted to earlier positions when ``causal`` and never
    includes the diagonal; the diagonal is always kept in the hard mask. Row
    ``t`` of the hard mask therefore has ``min(k, t+1)`` ones (causal) or
    ``min(k, L)`` ones. ``mode="train"`` adds Gumbel noise at the scheduled
    temperature; ``"eval"`` drops the noise and floors the temperature at
    1e-3.
    """
    if k < 1:
        raise ValueError(f"top-k must be >= 1, got {k}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    d = as_tensor(distances)
    length = d.shape[-1]
    eye = np.eye(length, dtype=bool)
    allowed = np.tril(np.ones((length, length), bool)) if causal else np.ones((length, length), bool)
    compete = allowed & ~eye
    # a row with no earlier position (row 0 under causality) competes on its diagonal
    compete = compete | (eye & ~compete.any(-1, keepdims=True))
    compete = np.broadcast_to(compete, d.shape)
    logits = d * (-1.0) * state.beta()
    tau = state.temperature()
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng stream")
        logits = logits + gumbel_draw(rng, d.shape)
    else:
        tau = max(tau, 1e-3)
    scaled = where(compete, logits * (1.0 / tau), NEG_INF)
    relaxed = softmax(scaled, axis=-1)
    hard = _topk_hard(scaled.data, np.broadcast_to(allowed, d.shape), k)
    if relaxed_forward:
        mask = where(np.broadcast_to(eye, d.shape), 1.0, relaxed)
    else:
        mask = straight_through(hard, relaxed)
    return DynamicMask(hard=hard, relaxed=relaxed, mask=mask, k=k, tau=tau, logits=scaled.data)


def fuse_masks(causal, dynamic=None, eps: float = EPS):
    """Additive mask ``causal + log(dynamic + eps)``; either term may be None."""
    if dynamic is None:
        return as_tensor(causal)
    penalty = log(as_tensor(dynamic) + eps)
    return penalty if causal is None else penalty + causal


# ---------------------------------------------------------------- attention


def masked_attention(q, k, v, fused=None, bias=None, return_weights=False):
    """``softmax(q k^T / sqrt(d_k) + bias + fused) v`` over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    if fused is not None:
        scores = scores + fused
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


class MaskBuilder(Module):
    """Produces the additive token mask for a forward pass in a given ablation mode.

    ``"dual"``: causal plus log-dynamic. ``"causal"``: causal only.
    ``"dynamic"``: log-dynamic sampled without causal restriction (leaks
    future tokens by design). ``"none"``: no mask.
    """

    def __init__(self, feature_dim: int, top_k: int, mode: str = "dual", beta_init=1.0, tau0=1.0, gamma=0.95, rng=None):
        if mode not in MASK_MODES:
            raise ValueError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")
        self.mode = mode
        self.top_k = top_k
        self.metric = MetricState(feature_dim, beta_init, tau0, gamma, rng)
        self.last = None

    @property
    def uses_dynamic(self):
        return self.mode in ("dual", "dynamic")

    @property
    def causal(self):
        return self.mode in ("dual", "causal")

    def __call__(self, features, rng=None, relaxed_forward=False):
        n_tok = features.shape[-2]
        causal = build_causal_mask(n_tok) if self.causal else None
        if not self.uses_dynamic:
            self.last = None
            return None if causal is None else Tensor(causal)
        dist = mahalanobis_matrix(features, self.metric.factor())
        mode = "train" if self.training else "eval"
        dyn = sample_dynamic_mask(
            dist, self.metric, rng, self.top_k, mode=mode, causal=self.causal, relaxed_forward=relaxed_forward
        )
        self.last = dyn
        return fuse_masks(causal, dyn.mask)


def dump_masks(fused, dynamic: DynamicMask | None = None) -> str:
    """JSON dump of a single ``P x P`` fused mask (and dynamic state if given).

    Layout: ``{"shape": [P, P], "fused": rows, "relaxed": rows, "hard": rows,
    "k": int, "tau": float}``; entries at or below the forbidden level are
    written as ``null``.
    """
    f = np.asarray(fused.data if isinstance(fused, Tensor) else fused, float)
    rows = [[None if v <= NEG_INF / 2 else float(v) for v in r] for r in f]
    doc = {"shape": list(f.shape), "fused": rows}
    if dynamic is not None:
        doc["relaxed"] = np.asarray(dynamic.relaxed.data).tolist()
        doc["hard"] = np.asarray(dynamic.hard).astype(int).tolist()
        doc["k"] = int(dynamic.k)
        doc["tau"] = float(dynamic.tau)
    return json.dumps(doc)
