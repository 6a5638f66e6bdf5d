"""Scikit-learn style wrapper around network construction and training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .heads import QUANTILES, ForecastResult, metrics
from .model import ModelConfig, build_network
from .training import Trainer, TrainConfig, destandardize, predict_batches


def _check_windows(x, name, ndim=3):
    x = np.asarray(x, dtype=float)
    if x.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or infinite values")
    return x


class DDTForecaster(RegressorMixin, BaseEstimator):
    """Quantile forecaster over windows ``X: n x L x C`` and labels ``y: n x H x N``.

    Channels of ``X`` are ordered targets, then ``n_weather`` weather
    covariates, then ``n_time`` calendar features; the target count is
    inferred as ``C - n_weather - n_time`` and must equal ``y.shape[-1]``.
    """

    def __init__(
        self,
        n_weather=0,
        n_time=0,
        patch_len=16,
        stride=8,
        d_embed=16,
        d_model=32,
        n_heads=2,
        depth=None,
        top_k=None,
        spectral_window=16,
        beta_init=1.0,
        tau0=1.0,
        gamma=0.95,
        ablation="none",
        mode="full",
        head_mode="auto",
        quantiles=QUANTILES,
        epochs=30,
        batch_size=32,
        lr=1e-3,
        patience=5,
        seed=0,
    ):
        self.n_weather = n_weather
        self.n_time = n_time
        self.patch_len = patch_len
        self.stride = stride
        self.d_embed = d_embed
        self.d_model = d_model
        self.n_heads = n_heads
        self.depth = depth
        self.top_k = top_k
        self.spectral_window = spectral_window
        self.beta_init = beta_init
        self.tau0 = tau0
        self.gamma = gamma
        self.ablation = ablation
        self.mode = mode
        self.head_mode = head_mode
        self.quantiles = quantiles
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.seed = seed

    def model_config(self, n_targets, input_len, horizon) -> ModelConfig:
        return ModelConfig(
            n_targets=n_targets,
            input_len=input_len,
            horizon=horizon,
            n_weather=self.n_weather,
            n_time=self.n_time,
            patch_len=self.patch_len,
            stride=self.stride,
            d_embed=self.d_embed,
            d_model=self.d_model,
            n_heads=self.n_heads,
            depth=self.depth,
            top_k=self.top_k,
            spectral_window=self.spectral_window,
            beta_init=self.beta_init,
            tau0=self.tau0,
            gamma=self.gamma,
            ablation=self.ablation,
            head_mode=self.head_mode,
            quantiles=tuple(self.quantiles),
            seed=self.seed,
        )

    def _init_network(self, n_targets, input_len, horizon):
        self.config_ = self.model_config(n_targets, input_len, horizon)
        self.network_ = build_network(self.config_, self.mode)
        self.n_targets_ = n_targets
        self.input_len_ = input_len
        self.horizon_ = horizon
        return self.network_

    def fit(self, X, y, eval_set=None, target_mean=None, target_std=None, log_file=None):
        """Train on windows; ``eval_set=(X_val, y_val)`` enables early stopping.

        ``target_mean``/``target_std`` (per target) put logged MSE/MAE on the
        original scale.
        """
        X = _check_windows(X, "X")
        y = _check_windows(y, "y")
        if len(X) != len(y):
            raise ValueError(f"X and y hold different window counts: {len(X)} vs {len(y)}")
        n_targets = X.shape[-1] - self.n_weather - self.n_time
        if n_targets != y.shape[-1]:
            raise ValueError(
                f"X has {X.shape[-1]} channels, which leaves {n_targets} targets after covariates; y has {y.shape[-1]}"
            )
        self._init_network(n_targets, X.shape[1], y.shape[1])
        x_val = y_val = None
        if eval_set is not None:
            x_val, y_val = _check_windows(eval_set[0], "X_val"), _check_windows(eval_set[1], "y_val")
        self.target_mean_, self.target_std_ = target_mean, target_std
        tcfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, patience=self.patience, seed=self.seed)
        trainer = Trainer(self.network_, tcfg, n_targets, self.n_weather, self.quantiles, target_mean, target_std, log_file)
        self.training_log_ = trainer.fit(X, y, x_val, y_val)
        return self

    def _check_input(self, X):
        check_is_fitted(self, "network_")
        X = _check_windows(X, "X")
        want = self.n_targets_ + self.n_weather + self.n_time
        if X.shape[1:] != (self.input_len_, want):
            raise ValueError(f"expected windows of shape (n, {self.input_len_}, {want}), got {X.shape}")
        return X

    def predict_quantiles(self, X) -> np.ndarray:
        """``n x H x N x Q`` forecasts on the training scale."""
        return predict_batches(self.network_, self._check_input(X), self.n_targets_, self.n_weather)

    def predict(self, X) -> np.ndarray:
        """Median forecast ``n x H x N``."""
        return ForecastResult(self.predict_quantiles(X), tuple(self.quantiles)).median

    def forecast(self, X, y=None) -> ForecastResult:
        yq = self.predict_quantiles(X)
        res = ForecastResult(yq, tuple(self.quantiles))
        if y is not None:
            mse, mae = metrics(
                destandardize(res.median, self.target_mean_, self.target_std_),
                destandardize(np.asarray(y, float), self.target_mean_, self.target_std_),
            )
            res.metrics = {"mse": mse, "mae": mae}
        return res

    def score(self, X, y):
        """Negative MSE of the median track (higher is better)."""
        return -metrics(self.predict(X), np.asarray(y, float))[0]


class LastValueForecaster(RegressorMixin, BaseEstimator):
    """Repeats the last observed target value over the horizon."""

    def __init__(self, horizon=24, n_targets=None):
        self.horizon = horizon
        self.n_targets = n_targets

    def fit(self, X, y=None):
        X = _check_windows(X, "X")
        self.n_targets_ = self.n_targets if self.n_targets is not None else (y.shape[-1] if y is not None else X.shape[-1])
        return self

    def predict(self, X):
        check_is_fitted(self, "n_targets_")
        X = _check_windows(X, "X")
        return np.repeat(X[:, -1:, : self.n_targets_], self.horizon, axis=1)
