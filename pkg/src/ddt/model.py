"""The full forecasting network, its ablation variants and the per-channel mode."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import InputEmbedding
from .experts import DualExpert
from .heads import QUANTILES, HeadConfig, make_head
from .masking import MaskBuilder, masked_attention, spectral_features, token_features
from .numerics import Linear, Module, Parameter, concat, gelu
from .numerics.functional import layer_norm
from .patching import PatchConfig, PatchEmbedding, STMABias, default_top_k, depth_for_length

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no-dual-mask", "causal-only", "dynamic-only")

# component ids used to derive independent initialization streams
_EMBED, _PATCH, _MASK, _BLOCK, _TEMPORAL, _CHANNEL, _HEAD = 0, 1, 2, 10, 20, 21, 30


@dataclass
class ModelConfig:
    n_targets: int
    input_len: int
    horizon: int
    n_weather: int = 0
    n_time: int = 0
    patch_len: int = 16
    stride: int = 8
    d_embed: int = 16
    d_model: int = 32
    n_heads: int = 2
    depth: int | None = None
    top_k: int | None = None
    spectral_window: int = 16
    beta_init: float = 1.0
    tau0: float = 1.0
    gamma: float = 0.95
    ablation: str = "none"
    head_mode: str = "auto"
    quantiles: tuple = QUANTILES
    use_channel: bool | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.n_targets < 1 or self.input_len < 1:
            raise ValueError("need at least one target channel and a positive input length")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.spectral_window > self.input_len:
            raise ValueError(f"spectral window {self.spectral_window} exceeds input length {self.input_len}")
        PatchConfig(self.patch_len, self.stride).check(self.input_len)
        if self.channel_expert and self.d_model % self.n_targets:
            raise ValueError(f"d_model {self.d_model} not divisible by target count {self.n_targets}")
        self.quantiles = tuple(self.quantiles)

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.patch_len, self.stride)

    @property
    def n_patches(self) -> int:
        return self.patch.n_patches(self.input_len)

    @property
    def mask_mode(self) -> str:
        return {"none": "dual", "no-dual-mask": "causal", "causal-only": "causal", "dynamic-only": "dynamic"}[self.ablation]

    @property
    def causal(self) -> bool:
        return self.ablation != "dynamic-only"

    @property
    def channel_expert(self) -> bool:
        if self.use_channel is not None:
            return self.use_channel
        return self.ablation != "no-dual-mask"

    @property
    def resolved_depth(self) -> int:
        return self.depth if self.depth is not None else depth_for_length(self.input_len)

    @property
    def resolved_top_k(self) -> int:
        return self.top_k if self.top_k is not None else default_top_k(self.n_patches)

    @property
    def feature_dim(self) -> int:
        return self.n_targets + self.spectral_window // 2 + 1

    def head_config(self, teacher_forcing: float = 0.0) -> HeadConfig:
        return HeadConfig(self.horizon, self.quantiles, self.head_mode, teacher_forcing)

    def to_dict(self) -> dict:
        return asdict(self)


def component_rng(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(component)])


class EncoderBlock(Module):
    """Pre-norm masked multi-head attention with distance bias, then a GELU-gated feed-forward."""

    def __init__(self, d: int, n_heads: int, n_patches: int, rng):
        self.n_heads = n_heads
        self.ln1_g = Parameter(np.ones(d))
        self.ln1_b = Parameter(np.zeros(d))
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.stma = STMABias(n_patches)
        self.ln2_g = Parameter(np.ones(d))
        self.ln2_b = Parameter(np.zeros(d))
        self.ff_in = Linear(d, 2 * d, rng)
        self.ff_out = Linear(d, d, rng)

    def _heads(self, x):
        b, p, d = x.shape
        return x.reshape(b, p, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def attention(self, z, fused=None, return_weights=False):
        b, p, d = z.shape
        q, k, v = self._heads(self.wq(z)), self._heads(self.wk(z)), self._heads(self.wv(z))
        if fused is not None and fused.ndim == 3:
            fused = fused.reshape(b, 1, p, p)
        out, w = masked_attention(q, k, v, fused, bias=self.stma(), return_weights=True)
        out = self.wo(out.transpose(0, 2, 1, 3).reshape(b, p, d))
        return (out, w) if return_weights else out

    def __call__(self, z, fused=None):
        d = z.shape[-1]
        z = z + self.attention(layer_norm(z, self.ln1_g, self.ln1_b), fused)
        h = self.ff_in(layer_norm(z, self.ln2_g, self.ln2_b))
        return z + self.ff_out(h[..., :d] * gelu(h[..., d:]))


class DDTNetwork(Module):
    """Embedding, patching, masked encoder stack, dual expert and output head.

    ``x`` is ``B x L x N`` standardized targets; ``x_weather`` and ``x_time``
    are optional ``B x L x .`` covariates. Output is ``B x H x N x Q``.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        causal = cfg.causal
        self.embed = InputEmbedding(
            cfg.n_targets, cfg.n_weather, cfg.n_time, cfg.d_embed, component_rng(cfg.seed, _EMBED), causal=causal
        )
        self.patch = PatchEmbedding(cfg.input_len, cfg.d_embed, cfg.d_model, cfg.patch, component_rng(cfg.seed, _PATCH))
        self.mask = MaskBuilder(
            cfg.feature_dim,
            cfg.resolved_top_k,
            mode=cfg.mask_mode,
            beta_init=cfg.beta_init,
            tau0=cfg.tau0,
            gamma=cfg.gamma,
            rng=component_rng(cfg.seed, _MASK),
        )
        self.blocks = [
            EncoderBlock(cfg.d_model, cfg.n_heads, cfg.n_patches, component_rng(cfg.seed, _BLOCK + i))
            for i in range(cfg.resolved_depth)
        ]
        self.expert = DualExpert(
            cfg.d_model,
            cfg.n_targets,
            component_rng(cfg.seed, _TEMPORAL),
            component_rng(cfg.seed, _CHANNEL),
            use_channel=cfg.channel_expert,
            causal=causal,
        )
        self.head = make_head(cfg.n_patches, cfg.d_model, cfg.head_config(), cfg.n_targets, component_rng(cfg.seed, _HEAD))
        if cfg.ablation == "no-dual-mask":
            log.info("ablation no-dual-mask: fused mask replaced by the causal mask, dual expert by the temporal expert")
        if not causal:
            log.warning("ablation %s removes every causal restriction; encoder outputs see future inputs", cfg.ablation)

    @property
    def epoch(self) -> int:
        return self.mask.metric.epoch

    @epoch.setter
    def epoch(self, value: int) -> None:
        self.mask.metric.epoch = int(value)

    def mask_features(self, x) -> np.ndarray:
        feats = spectral_features(np.asarray(x, float), self.cfg.spectral_window)
        return token_features(feats, self.cfg.patch_len, self.cfg.stride, self.cfg.n_patches)

    def encode(self, x, x_weather=None, x_time=None, rng=None, relaxed_forward=False):
        """Token states ``B x P x D_model``. Token ``p`` reads inputs up to its patch end only."""
        x = np.asarray(x, float)
        if x.ndim != 3 or x.shape[1:] != (self.cfg.input_len, self.cfg.n_targets):
            raise ValueError(f"expected input B x {self.cfg.input_len} x {self.cfg.n_targets}, got {x.shape}")
        e = self.embed(x, x_weather, x_time)
        z = self.patch(e)
        fused = self.mask(self.mask_features(x), rng=rng, relaxed_forward=relaxed_forward)
        for block in self.blocks:
            z = block(z, fused)
        return self.expert(z)

    def __call__(self, x, x_weather=None, x_time=None, rng=None, targets=None, teacher_forcing=0.0, tf_rng=None):
        enc = self.encode(x, x_weather, x_time, rng=rng)
        start = np.asarray(x, float)[:, -1, :]
        return self.head(
            enc, start=start, targets=targets, teacher_forcing=teacher_forcing, rng=tf_rng, training=self.training
        )

    def token_ends(self) -> np.ndarray:
        """Last input time index read by each token."""
        c = self.cfg
        return np.minimum(np.arange(c.n_patches) * c.stride + c.patch_len - 1, c.input_len - 1)


class CINetwork(Module):
    """One independent network per target channel, sharing only the calendar inputs.

    Channel ``n`` is initialized from ``seed + n`` with the channel expert
    disabled, so its forecast is a function of channel ``n`` alone.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.nets = []
        for n in range(cfg.n_targets):
            sub = ModelConfig(**{**cfg.to_dict(), "n_targets": 1, "n_weather": 0, "use_channel": False, "seed": cfg.seed + n})
            self.nets.append(DDTNetwork(sub))

    @property
    def epoch(self) -> int:
        return self.nets[0].epoch

    @epoch.setter
    def epoch(self, value: int) -> None:
        for net in self.nets:
            net.epoch = value

    def _split_rng(self, rng, n):
        return None if rng is None else rng.split(n)

    def encode(self, x, x_weather=None, x_time=None, rng=None, relaxed_forward=False):
        x = np.asarray(x, float)
        outs = [
            net.encode(x[..., n : n + 1], None, x_time, rng=self._split_rng(rng, n), relaxed_forward=relaxed_forward)
            for n, net in enumerate(self.nets)
        ]
        return concat(outs, axis=-1)

    def __call__(self, x, x_weather=None, x_time=None, rng=None, targets=None, teacher_forcing=0.0, tf_rng=None):
        x = np.asarray(x, float)
        outs = []
        for n, net in enumerate(self.nets):
            t = None if targets is None else np.asarray(targets, float)[..., n : n + 1]
            outs.append(
                net(x[..., n : n + 1], None, x_time, rng=self._split_rng(rng, n), targets=t,
                    teacher_forcing=teacher_forcing, tf_rng=tf_rng)
            )
        return concat(outs, axis=2)

    def token_ends(self) -> np.ndarray:
        return self.nets[0].token_ends()


def build_network(cfg: ModelConfig, mode: str = "full"):
    if mode == "full":
        return DDTNetwork(cfg)
    if mode == "ci":
        return CINetwork(cfg)
    raise ValueError(f"mode must be 'full' or 'ci', got {mode!r}")


def receptive_summary(cfg: ModelConfig) -> dict:
    """Shape bookkeeping for logs and manifests."""
    return {
        "n_patches": cfg.n_patches,
        "depth": cfg.resolved_depth,
        "top_k": cfg.resolved_top_k,
        "feature_dim": cfg.feature_dim,
        "head": cfg.head_config().resolved_mode,
        "mask_mode": cfg.mask_mode,
        "causal": cfg.causal,
        "channel_expert": cfg.channel_expert,
    }
