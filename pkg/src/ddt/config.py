"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, lists are comma-separated::

    data.path = data/ett.csv
    data.targets = HUFL, HULL, MUFL, OT
    window.horizons = 24
    model.d_model = 32
    seed = 0

Unknown keys and malformed values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .data.split import SUPPORTED_HORIZONS
from .model import ABLATIONS


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v):
    return v.strip()


def _list(cast):
    def parse(v):
        items = [s.strip() for s in v.split(",") if s.strip()]
        return tuple(cast(s) for s in items)

    return parse


def _opt(cast):
    def parse(v):
        return None if v.strip().lower() in ("", "none", "auto") else cast(v)

    return parse


# key -> (parser, default)
SCHEMA = {
    "data.path": (_str, None),
    "data.targets": (_list(_str), None),
    "data.weather": (_list(_str), ()),
    "data.time_features": (_bool, True),
    "data.holidays": (_list(_str), ()),
    "data.synthetic_length": (_int, 2000),
    "data.synthetic_channels": (_int, 4),
    "data.synthetic_seed": (_int, 0),
    "window.input_len": (_int, 96),
    "window.horizons": (_list(_int), (24,)),
    "window.stride": (_int, 4),
    "split.ratios": (_list(_float), (0.70, 0.15, 0.15)),
    "split.clusters": (_int, 4),
    "split.seed": (_int, 0),
    "anomaly.lof_neighbors": (_int, 20),
    "anomaly.lof_threshold": (_float, 1.5),
    "anomaly.fit_exclusion": (_float, 3.0),
    "anomaly.gev_alpha": (_float, 0.01),
    "anomaly.block_size": (_int, 24),
    "impute.lengthscale": (_float, 4.0),
    "impute.noise_var": (_float, 1e-4),
    "scale.wasserstein_threshold": (_float, 0.2),
    "granger.lag": (_int, 2),
    "augment.copies": (_int, 0),
    "augment.ops": (_list(_str), ("dtw_warp", "log_scale", "snr_noise")),
    "augment.max_stretch": (_float, 1.2),
    "augment.max_scale": (_float, 1.1),
    "augment.snr_db": (_float, 20.0),
    "patch.len": (_int, 16),
    "patch.stride": (_int, 8),
    "model.d_embed": (_int, 16),
    "model.d_model": (_int, 32),
    "model.heads": (_int, 2),
    "model.depth": (_opt(_int), None),
    "model.head": (_str, "auto"),
    "mask.k": (_opt(_int), None),
    "mask.window": (_int, 16),
    "mask.tau0": (_float, 1.0),
    "mask.gamma": (_float, 0.95),
    "mask.beta": (_float, 1.0),
    "train.epochs": (_int, 30),
    "train.batch_size": (_int, 32),
    "train.lr": (_float, 1e-3),
    "train.patience": (_int, 5),
    "ablate.seeds": (_list(_int), (0, 1, 2)),
    "mode": (_str, "full"),
    "ablation": (_str, "none"),
    "seed": (_int, 0),
    "out": (_str, "runs"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def replace(self, **updates) -> "RunConfig":
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        cfg = RunConfig(vals, self.source)
        cfg.validate()
        return cfg

    @property
    def synthetic(self) -> bool:
        return self.values["data.path"] in (None, "", "synthetic")

    def validate(self) -> None:
        v = self.values
        if v["mode"] not in ("full", "ci"):
            raise ConfigError("mode", f"must be full or ci, got {v['mode']!r}")
        if v["ablation"] not in ABLATIONS:
            raise ConfigError("ablation", f"must be one of {', '.join(ABLATIONS)}, got {v['ablation']!r}")
        for h in v["window.horizons"]:
            if h not in SUPPORTED_HORIZONS:
                raise ConfigError("window.horizons", f"horizon {h} not in supported set {SUPPORTED_HORIZONS}")
        if not v["window.horizons"]:
            raise ConfigError("window.horizons", "at least one horizon is required")
        if len(v["split.ratios"]) != 3 or abs(sum(v["split.ratios"]) - 1.0) > 1e-9:
            raise ConfigError("split.ratios", "need three fractions summing to 1")
        if not 1 <= v["patch.stride"] <= v["patch.len"] <= v["window.input_len"]:
            raise ConfigError("patch.stride", "need 1 <= patch.stride <= patch.len <= window.input_len")
        if v["model.d_model"] % v["model.heads"]:
            raise ConfigError("model.heads", "must divide model.d_model")
        if v["model.head"] not in ("auto", "direct", "recursive"):
            raise ConfigError("model.head", "must be auto, direct or recursive")
        if v["mask.k"] is not None and v["mask.k"] < 1:
            raise ConfigError("mask.k", "must be >= 1")
        if not 0 < v["mask.gamma"] < 1:
            raise ConfigError("mask.gamma", "must lie in (0, 1)")
        if v["mask.tau0"] <= 0 or v["mask.beta"] <= 0:
            raise ConfigError("mask.tau0", "temperature and sharpness must be positive")
        for key in ("window.input_len", "window.stride", "train.epochs", "train.batch_size", "train.patience", "split.clusters"):
            if v[key] < 1:
                raise ConfigError(key, "must be >= 1")
        if v["train.lr"] < 0:
            raise ConfigError("train.lr", "must be non-negative")
        if not self.synthetic:
            if not v["data.targets"]:
                raise ConfigError("data.targets", "required when data.path names a file")
            if not os.path.exists(v["data.path"]):
                raise ConfigError("data.path", f"file not found: {v['data.path']}")
        for op in v["augment.ops"]:
            if op not in ("dtw_warp", "log_scale", "snr_noise"):
                raise ConfigError("augment.ops", f"unknown augmentation {op!r}")
        if v["mode"] == "full" and v["ablation"] != "no-dual-mask":
            n = len(v["data.targets"]) if v["data.targets"] else v["data.synthetic_channels"]
            if v["model.d_model"] % n:
                raise ConfigError("model.d_model", f"must be divisible by the target count {n} for the channel expert")

    def manifest(self) -> dict:
        """Every setting, defaults included, in sorted key order."""
        return {k: (list(val) if isinstance(val, tuple) else val) for k, val in sorted(self.values.items())}

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_config(text: str, source: str | None = None, overrides: dict | None = None) -> RunConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, f"unknown setting (line {lineno})")
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {val!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(key, "unknown setting")
        values[key] = SCHEMA[key][0](val) if isinstance(val, str) else val
    cfg = RunConfig(values, source)
    cfg.validate()
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path), overrides)
