"""Registry of differentiable operations and a finite-difference sweep over them."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .embedding import EnergyEmbedding, GatedFusion
from .experts import ChannelExpert, DualExpert, FusionGate, TemporalExpert, fuse_experts
from .heads import DirectHead, HeadConfig, RecursiveHead, quantile_loss
from .masking import MetricState, fuse_masks, mahalanobis_matrix, masked_attention, sample_dynamic_mask
from .model import EncoderBlock
from .numerics import Tensor
from .numerics.functional import dilated_conv1d, layer_norm, linear, pinball
from .numerics.gradcheck import grad_check
from .patching import BottleneckProjection, PatchConfig, STMABias, extract_patches, t_layernorm

TOL = 1e-4
TOL_ST = 1e-3


@dataclass
class GradCase:
    name: str
    build: Callable  # rng -> (op, point) with op(*tensors) -> scalar Tensor
    tol: float = TOL


def _weighted(out, w):
    return nx.tsum(out * w)


def _weights(rng, shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def _unary(fn, positive=False, kink=False):
    def build(rng):
        if positive:
            x = rng.uniform(0.5, 2.0, (3, 4))
        elif kink:
            x = _away_from_zero(rng, (3, 4))
        else:
            x = rng.standard_normal((3, 4))
        w = _weights(rng, (3, 4))
        return (lambda a: _weighted(fn(a), w)), [x]

    return build


def _binary(fn, positive_b=False):
    def build(rng):
        a = rng.standard_normal((3, 4))
        b = rng.uniform(0.5, 2.0, (4,)) if positive_b else rng.standard_normal((4,))
        w = _weights(rng, (3, 4))
        return (lambda x, y: _weighted(fn(x, y), w)), [a, b]

    return build


def _module_case(make, in_shape, params):
    """Check a module against its input and the named parameters."""

    def build(rng):
        mod = make(rng)
        for p in mod.parameters():  # move off zero-initialized biases
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
        named = dict(mod.named_parameters())
        x = rng.standard_normal(in_shape)
        out_w = {}

        def op(xt, *ws):
            saved = {}
            for name, w in zip(params, ws):
                saved[name] = _swap(mod, name, w)
            try:
                out = mod(xt)
            finally:
                for name in params:
                    _swap(mod, name, saved[name])
            if "w" not in out_w:
                out_w["w"] = _weights(np.random.default_rng(1), out.shape)
            return _weighted(out, out_w["w"])

        return op, [x] + [named[n].data.copy() for n in params]

    return build


def _swap(mod, dotted, value):
    """Replace the attribute or list entry at ``dotted``; returns the old value."""
    parts = dotted.split(".")
    owner = mod
    for p in parts[:-1]:
        owner = owner[int(p)] if isinstance(owner, list) else getattr(owner, p)
    last = parts[-1]
    if isinstance(owner, list):
        old, owner[int(last)] = owner[int(last)], value
    else:
        old = getattr(owner, last)
        setattr(owner, last, value)
    return old


def _attention(rng):
    q, k, v = (rng.standard_normal((2, 5, 4)) for _ in range(3))
    fused = np.where(np.tril(np.ones((5, 5))) > 0, rng.standard_normal((5, 5)), nx.NEG_INF)
    w = _weights(rng, (2, 5, 4))
    return (lambda a, b, c: _weighted(masked_attention(a, b, c, fused), w)), [q, k, v]


def _conv(causal):
    def build(rng):
        x = rng.standard_normal((2, 7, 3))
        kern = rng.standard_normal((3, 3, 2))
        bias = rng.standard_normal(2)
        w = _weights(rng, (2, 7, 2))
        return (lambda a, k, b: _weighted(dilated_conv1d(a, k, b, dilation=2, causal=causal), w)), [x, kern, bias]

    return build


def _layernorm(rng):
    x = rng.standard_normal((3, 5))
    g, b = rng.standard_normal(5), rng.standard_normal(5)
    w = _weights(rng, (3, 5))
    return (lambda a, gg, bb: _weighted(layer_norm(a, gg, bb), w)), [x, g, b]


def _tln(rng):
    x = rng.standard_normal((2, 3, 4, 2))
    g, b = rng.standard_normal(2), rng.standard_normal(2)
    w = _weights(rng, x.shape)
    return (lambda a, gg, bb: _weighted(t_layernorm(a, gg, bb), w)), [x, g, b]


def _pinball(rng):
    y = rng.standard_normal((4, 3))
    yhat = y + _away_from_zero(rng, (4, 3))
    q = np.array([0.1, 0.5, 0.9])
    return (lambda a: nx.tsum(pinball(a, y, q))), [yhat]


def _qloss(rng):
    y = rng.standard_normal((2, 3, 2))
    yhat = y[..., None] + _away_from_zero(rng, (2, 3, 2, 3))
    return (lambda a: quantile_loss(a, y)), [yhat]


def _extract(rng):
    x = rng.standard_normal((1, 10, 2))
    cfg = PatchConfig(4, 3)
    w = _weights(rng, (1, 3, 4, 2))
    return (lambda a: _weighted(extract_patches(a, cfg)[0], w)), [x]


def _matmul(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    w = _weights(rng, (2, 3, 5))
    return (lambda x, y: _weighted(nx.matmul(x, y), w)), [a, b]


def _softmax(rng):
    x = rng.standard_normal((3, 5))
    w = _weights(rng, (3, 5))
    return (lambda a: _weighted(nx.softmax(a, axis=-1), w)), [x]


def _shape_ops(rng):
    x = rng.standard_normal((2, 3, 4))
    w = _weights(rng, (4, 6))

    def op(a):
        t = a.transpose(2, 0, 1).reshape(4, 6)
        return _weighted(t, w)

    return op, [x]


def _index_ops(rng):
    x = rng.standard_normal((4, 5))
    idx = np.array([[0, 2, 2], [3, 1, 0]])
    w1 = _weights(rng, (2, 3, 5))
    w2 = _weights(rng, (4, 7))
    return (lambda a: _weighted(nx.getitem(a, idx), w1) + _weighted(nx.pad(a, ((0, 0), (1, 1))), w2)), [x]


def _join_ops(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    w1, w2 = _weights(rng, (2, 6)), _weights(rng, (2, 2, 3))
    return (lambda x, y: _weighted(nx.concat([x, y], axis=1), w1) + _weighted(nx.stack([x, y], axis=1), w2)), [a, b]


def _reduce_ops(rng):
    x = rng.standard_normal((3, 4))
    w = _weights(rng, (4,))
    return (lambda a: _weighted(a.mean(axis=0), w) + a.sum() * 0.3 + _weighted(nx.broadcast_to(a[:1], (3, 4)), 1.0)), [x]


def _where(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    cond = rng.uniform(size=(3, 4)) > 0.5
    w = _weights(rng, (3, 4))
    return (lambda x, y: _weighted(nx.where(cond, x, y), w)), [a, b]


def _mahalanobis(rng):
    feats = rng.standard_normal((5, 3))
    state = MetricState(3, rng=rng)
    factor = state.factor().data + 0.2 * np.tril(rng.standard_normal((3, 3)))
    w = _weights(rng, (5, 5))
    return (lambda f, lf: _weighted(mahalanobis_matrix(f, lf), w)), [feats, factor]


def _metric_factor(rng):
    state = MetricState(4, rng=rng)
    w = _weights(rng, (4, 4))

    def op(off, diag):
        state.offdiag, state.diag_raw = off, diag
        return _weighted(state.factor(), w)

    return op, [state.offdiag.data + 0.1 * rng.standard_normal((4, 4)), rng.standard_normal(4)]


def _dynamic_relaxed(rng):
    """Straight-through path: gradient of the relaxed mask through Gumbel-Softmax."""
    n = 6
    feats = rng.standard_normal((n, 3))
    d = np.sqrt(((feats[:, None] - feats[None]) ** 2).sum(-1))
    state = MetricState(3, tau0=0.7, rng=rng)
    seed = int(rng.integers(1 << 30))
    w = _weights(rng, (n, n))

    def op(dist, beta_raw):
        state.beta_raw = beta_raw
        dyn = sample_dynamic_mask(dist, state, nx.RngStream(seed), k=3, mode="train", relaxed_forward=True)
        return _weighted(fuse_masks(None, dyn.mask), w)

    return op, [d, np.array(0.3)]


def _make_block(rng):
    block = EncoderBlock(4, 2, 5, rng)
    fused = Tensor(np.where(np.tril(np.ones((5, 5))) > 0, 0.0, nx.NEG_INF))
    return lambda x: block(x, fused), block


def _block(rng):
    fn, block = _make_block(rng)
    for p in block.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((2, 5, 4))
    w = _weights(rng, (2, 5, 4))
    return (lambda a: _weighted(fn(a), w)), [x]


def _recursive(rng):
    head = RecursiveHead(4, HeadConfig(3, mode="recursive"), 2, rng)
    enc = rng.standard_normal((2, 5, 4))
    start = rng.standard_normal((2, 2))
    w = _weights(rng, (2, 3, 2, 3))

    def op(e, wc):
        head.cell.w = wc
        return _weighted(head(e, start=start), w)

    return op, [enc, head.cell.w.data.copy()]


def _fuse(rng):
    gate = FusionGate(4, rng)
    ht, hc, z = (rng.standard_normal((2, 3, 4)) for _ in range(3))
    w = _weights(rng, (2, 3, 4))
    return (lambda a, b, c: _weighted(fuse_experts(a, b, c, gate), w)), [ht, hc, z]


def _gated_fusion(rng):
    fusion = GatedFusion(3, rng)
    a, b, c = (rng.standard_normal((2, 4, 3)) for _ in range(3))
    w = _weights(rng, (2, 4, 3))
    return (lambda x, y, z: _weighted(fusion(x, y, z), w)), [a, b, c]


REGISTRY = [
    GradCase("add", _binary(nx.add)),
    GradCase("sub", _binary(nx.sub)),
    GradCase("mul", _binary(nx.mul)),
    GradCase("div", _binary(nx.div, positive_b=True)),
    GradCase("power", _unary(lambda a: nx.power(a, 1.7), positive=True)),
    GradCase("exp", _unary(nx.exp)),
    GradCase("log", _unary(nx.log, positive=True)),
    GradCase("sqrt", _unary(nx.sqrt, positive=True)),
    GradCase("tanh", _unary(nx.tanh)),
    GradCase("sigmoid", _unary(nx.sigmoid)),
    GradCase("relu", _unary(nx.relu, kink=True)),
    GradCase("softplus", _unary(nx.softplus)),
    GradCase("gelu", _unary(nx.gelu)),
    GradCase("where", _where),
    GradCase("reductions", _reduce_ops),
    GradCase("reshape_transpose", _shape_ops),
    GradCase("getitem_pad", _index_ops),
    GradCase("concat_stack", _join_ops),
    GradCase("matmul", _matmul),
    GradCase("softmax", _softmax),
    GradCase("linear", _binary(lambda x, b: linear(x, np.eye(4) * 0.5 + 0.1, b))),
    GradCase("layer_norm", _layernorm),
    GradCase("t_layernorm", _tln),
    GradCase("dilated_conv1d", _conv(False)),
    GradCase("dilated_conv1d_causal", _conv(True)),
    GradCase("pinball", _pinball),
    GradCase("quantile_loss", _qloss),
    GradCase("extract_patches", _extract),
    GradCase("masked_attention", _attention),
    GradCase("mahalanobis", _mahalanobis),
    GradCase("metric_factor", _metric_factor),
    GradCase("dynamic_mask_straight_through", _dynamic_relaxed, TOL_ST),
    GradCase("stma_bias", _module_case(lambda r: _STMAWrap(5), (1,), ["stma.table"])),
    GradCase("bottleneck_projection", _module_case(lambda r: BottleneckProjection(6, 3, r), (2, 6), ["fc1.weight"])),
    GradCase("energy_embedding", _module_case(lambda r: EnergyEmbedding(2, 3, r), (1, 6, 2), ["k1", "q.weight"])),
    GradCase("gated_fusion", _gated_fusion),
    GradCase("temporal_expert", _module_case(lambda r: TemporalExpert(3, r), (1, 7, 3), ["conv.2", "gate.1"])),
    GradCase("channel_expert", _module_case(lambda r: ChannelExpert(4, 2, r), (2, 3, 4), ["scorer.fc1.weight", "value.weight"])),
    GradCase("fuse_experts", _fuse),
    GradCase("dual_expert", _module_case(lambda r: DualExpert(4, 2, r, r), (1, 4, 4), ["gate.mlp.fc2.bias"])),
    GradCase("encoder_block", _block),
    GradCase("direct_head", _module_case(lambda r: DirectHead(3, 2, HeadConfig(2), 2, r), (2, 3, 2), ["proj.weight"])),
    GradCase("recursive_head", _recursive),
]


class _STMAWrap(nx.Module):
    def __init__(self, n):
        self.stma = STMABias(n)

    def __call__(self, x):
        return self.stma() * nx.tsum(x)


def run_gradcheck(points: int = 20, seed: int = 0, cases=None, eps: float = 1e-5) -> list:
    """Check every registered op at ``points`` random points; one record per op."""
    records = []
    for i, case in enumerate(cases or REGISTRY):
        start = time.perf_counter()
        worst = 0.0
        error = None
        for j in range(points):
            rng = np.random.default_rng([seed, i, j])
            try:
                op, point = case.build(rng)
                worst = max(worst, grad_check(op, point, eps=eps))
            except Exception as exc:  # a broken op is a failed record, not a crash
                error = f"{type(exc).__name__}: {exc}"
                break
        passed = error is None and worst < case.tol
        records.append(
            {
                "op": case.name,
                "max_rel_error": worst,
                "tolerance": case.tol,
                "points": points,
                "passed": bool(passed),
                "error": error,
                "seconds": round(time.perf_counter() - start, 3),
            }
        )
    return records


def gradcheck_report(records) -> str:
    return json.dumps({"ops": records, "all_passed": all(r["passed"] for r in records)}, indent=2)
