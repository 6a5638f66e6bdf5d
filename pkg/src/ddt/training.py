"""Mini-batch training with early stopping, annealed masks and teacher forcing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .heads import QUANTILES, metrics, quantile_loss
from .numerics import Adam, RngStream

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when the loss turns non-finite; ``dump`` holds the diagnostic record."""

    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    clip_norm: float | None = 1.0
    seed: int = 0
    teacher_forcing: bool = True
    dump_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def teacher_forcing_ratio(epoch: int, epochs: int) -> float:
    """Linear decay from 1 to 0 over the first half of training."""
    half = max(epochs / 2.0, 1.0)
    return max(0.0, 1.0 - epoch / half)


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _split_inputs(x, n_targets, n_weather):
    x_t = x[..., :n_targets]
    x_w = x[..., n_targets : n_targets + n_weather] if n_weather else None
    x_c = x[..., n_targets + n_weather :]
    return x_t, x_w, (x_c if x_c.shape[-1] else None)


def predict_batches(network, x, n_targets, n_weather, batch_size=256):
    """Eval-mode quantile forecasts ``n x H x N x Q`` as a numpy array."""
    was_training = network.training
    network.eval()
    outs = []
    try:
        for i in range(0, len(x), batch_size):
            xt, xw, xc = _split_inputs(x[i : i + batch_size], n_targets, n_weather)
            outs.append(network(xt, xw, xc).data)
    finally:
        network.train(was_training)
    return np.concatenate(outs, axis=0)


def destandardize(y, mean=None, std=None):
    if mean is None:
        return y
    return y * np.asarray(std, float) + np.asarray(mean, float)


def evaluate(network, x, y, n_targets, n_weather, quantiles=QUANTILES, mean=None, std=None):
    """Quantile loss on the given scale plus median-track MSE/MAE on the original scale."""
    yq = predict_batches(network, x, n_targets, n_weather)
    loss = quantile_loss(yq, y, quantiles).item()
    mid = list(quantiles).index(0.5) if 0.5 in quantiles else len(quantiles) // 2
    mse, mae = metrics(destandardize(yq[..., mid], mean, std), destandardize(y, mean, std))
    return {"loss": loss, "mse": mse, "mae": mae}


class Trainer:
    """Owns the optimizer, the Gumbel stream and the epoch schedule for one network."""

    def __init__(self, network, cfg: TrainConfig, n_targets: int, n_weather: int = 0, quantiles=QUANTILES,
                 mean=None, std=None, log_file=None):
        self.net = network
        self.cfg = cfg
        self.n_targets = n_targets
        self.n_weather = n_weather
        self.quantiles = tuple(quantiles)
        self.mean, self.std = mean, std
        self.opt = Adam(network.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
        self.gumbel = RngStream(seed=cfg.seed * 7919 + 17)
        self.tf_rng = np.random.default_rng([cfg.seed, 200])
        self.log_file = log_file
        self.log = TrainingLog()

    def _emit(self, record):
        self.log.records.append(record)
        if self.log_file is not None:
            self.log_file.write(json.dumps(record, sort_keys=True) + "\n")
            self.log_file.flush()
        log.info("epoch %d train %.5f val %s", record["epoch"], record["train_loss"], record.get("val_loss"))

    def _abort(self, epoch, step, x, y, loss):
        mask = getattr(getattr(self.net, "mask", None), "last", None)
        dump = {
            "epoch": epoch,
            "step": step,
            "loss": float(loss),
            "batch_shape": list(x.shape),
            "batch_finite": bool(np.isfinite(x).all() and np.isfinite(y).all()),
            "batch_absmax": float(np.nanmax(np.abs(x))) if x.size else 0.0,
            "param_finite": bool(all(np.isfinite(p.data).all() for p in self.net.parameters())),
        }
        if mask is not None:
            dump["mask"] = {"k": mask.k, "tau": mask.tau, "hard_ones": float(mask.hard.sum()),
                            "relaxed_finite": bool(np.isfinite(mask.relaxed.data).all())}
        if self.cfg.dump_path:
            with open(self.cfg.dump_path, "w") as fh:
                json.dump(dump, fh, indent=2)
        raise TrainingAborted(f"non-finite loss at epoch {epoch}, step {step}", dump)

    def train_epoch(self, x, y, epoch):
        net = self.net
        net.train()
        net.epoch = epoch
        tf = teacher_forcing_ratio(epoch, self.cfg.epochs) if self.cfg.teacher_forcing else 0.0
        order = np.random.default_rng([self.cfg.seed, 100, epoch]).permutation(len(x))
        total, count = 0.0, 0
        for step, i in enumerate(range(0, len(x), self.cfg.batch_size)):
            idx = order[i : i + self.cfg.batch_size]
            xb, yb = x[idx], y[idx]
            xt, xw, xc = _split_inputs(xb, self.n_targets, self.n_weather)
            self.opt.zero_grad()
            out = net(xt, xw, xc, rng=self.gumbel, targets=yb, teacher_forcing=tf, tf_rng=self.tf_rng)
            loss = quantile_loss(out, yb, self.quantiles)
            if not math.isfinite(loss.item()):
                self._abort(epoch, step, xb, yb, loss.item())
            loss.backward()
            self.opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        return total / max(count, 1), tf

    def fit(self, x, y, x_val=None, y_val=None):
        """Train; restores the best-validation parameters when a validation set is given."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        best, best_state, wait = math.inf, None, 0
        for epoch in range(self.cfg.epochs):
            train_loss, tf = self.train_epoch(x, y, epoch)
            record = {"epoch": epoch, "train_loss": train_loss, "tau": self.net_tau(), "teacher_forcing": tf}
            if x_val is not None and len(x_val):
                ev = evaluate(self.net, x_val, y_val, self.n_targets, self.n_weather, self.quantiles, self.mean, self.std)
                record.update(val_loss=ev["loss"], val_mse=ev["mse"], val_mae=ev["mae"])
                if ev["loss"] < best:
                    best, wait = ev["loss"], 0
                    best_state = self.net.state_dict()
                    self.log.best_epoch = epoch
                else:
                    wait += 1
            self._emit(record)
            if best_state is not None and wait >= self.cfg.patience:
                self.log.stopped_early = True
                break
        if best_state is not None:
            self.net.load_state_dict(best_state)
            self.net.epoch = self.log.best_epoch
        else:
            self.log.best_epoch = self.cfg.epochs - 1
        self.net.eval()
        return self.log

    def net_tau(self):
        nets = getattr(self.net, "nets", [self.net])
        return float(nets[0].mask.metric.temperature())
