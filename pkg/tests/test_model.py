import io
import json

import numpy as np
import pytest
from sklearn.base import clone

from ddt import ABLATIONS, CINetwork, DDTNetwork, ModelConfig, build_network
from ddt.checkpoint import CheckpointError, dumps, load, loads, save
from ddt.estimator import DDTForecaster, LastValueForecaster
from ddt.heads import quantile_loss
from ddt.model import receptive_summary
from ddt.numerics import RngStream
from ddt.training import Trainer, TrainConfig, TrainingAborted, evaluate, teacher_forcing_ratio


def small_cfg(**kw):
    base = dict(n_targets=2, input_len=32, horizon=8, patch_len=8, stride=4, d_embed=8, d_model=8, n_heads=2,
                spectral_window=8)
    base.update(kw)
    return ModelConfig(**base)


def _x(b=2, cfg=None, seed=0):
    cfg = cfg or small_cfg()
    return np.random.default_rng(seed).standard_normal((b, cfg.input_len, cfg.n_targets))


# ------------------------------------------------------------------ configuration


def test_config_derived_values():
    cfg = ModelConfig(n_targets=4, input_len=96, horizon=24)
    assert cfg.n_patches == 11 and cfg.resolved_depth == 2 and cfg.resolved_top_k == 3
    assert cfg.feature_dim == 4 + 9
    s = receptive_summary(cfg)
    assert s["head"] == "direct" and s["mask_mode"] == "dual" and s["causal"]


@pytest.mark.parametrize(
    "kw",
    [dict(ablation="bogus"), dict(d_model=9), dict(spectral_window=64), dict(patch_len=64), dict(n_targets=3)],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw)


@pytest.mark.parametrize(
    "ablation,mask,causal,channel",
    [
        ("none", "dual", True, True),
        ("no-dual-mask", "causal", True, False),
        ("causal-only", "causal", True, True),
        ("dynamic-only", "dynamic", False, True),
    ],
)
def test_ablation_wiring(ablation, mask, causal, channel):
    cfg = small_cfg(ablation=ablation)
    net = DDTNetwork(cfg)
    assert net.mask.mode == mask and cfg.causal is causal
    assert (net.expert.channel is not None) is channel


def test_build_network_modes():
    assert isinstance(build_network(small_cfg(), "ci"), CINetwork)
    with pytest.raises(ValueError):
        build_network(small_cfg(), "both")


def test_initialization_is_seeded():
    a, b = DDTNetwork(small_cfg(seed=3)), DDTNetwork(small_cfg(seed=3))
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and va.tobytes() == vb.tobytes()
    c = DDTNetwork(small_cfg(seed=4))
    assert any(not np.array_equal(v, c.state_dict()[k]) for k, v in a.state_dict().items())


# ------------------------------------------------------------------ forward behaviour


def test_output_shape_and_input_check():
    net = DDTNetwork(small_cfg())
    net.eval()
    assert net(_x()).shape == (2, 8, 2, 3)
    with pytest.raises(ValueError):
        net(np.zeros((2, 31, 2)))


def test_train_mode_requires_rng():
    net = DDTNetwork(small_cfg())
    with pytest.raises(ValueError):
        net(_x())
    assert net(_x(), rng=RngStream(0)).shape == (2, 8, 2, 3)


@pytest.mark.parametrize("ablation", [a for a in ABLATIONS if a != "dynamic-only"])
def test_encoder_is_causal_per_token(ablation):
    cfg = small_cfg(ablation=ablation)
    net = DDTNetwork(cfg)
    net.eval()
    x = _x(cfg=cfg)
    base = net.encode(x).data
    ends = net.token_ends()
    for t in (7, 13, 22):
        x2 = x.copy()
        x2[:, t + 1 :] += np.random.default_rng(t).standard_normal(x2[:, t + 1 :].shape)
        out = net.encode(x2).data
        keep = ends <= t
        assert keep.any()
        assert (out[:, keep] == base[:, keep]).all()


def test_dynamic_only_leaks_future():
    cfg = small_cfg(ablation="dynamic-only")
    net = DDTNetwork(cfg)
    net.eval()
    x = _x(cfg=cfg)
    x2 = x.copy()
    x2[:, 20:] += 1.0
    assert not np.array_equal(net.encode(x).data[:, 0], net.encode(x2).data[:, 0])


def test_ci_channels_are_independent():
    cfg = small_cfg(n_targets=3, d_model=6)
    net = CINetwork(cfg)
    net.eval()
    x = _x(cfg=cfg)
    base = net(x).data
    rng = np.random.default_rng(0)
    for j in range(3):
        for _ in range(3):
            x2 = x.copy()
            x2[..., j] += rng.standard_normal(x2[..., j].shape)
            out = net(x2).data
            for i in range(3):
                if i != j:
                    assert (out[:, :, i] == base[:, :, i]).all()
            assert not np.array_equal(out[:, :, j], base[:, :, j])


def test_ci_single_channel_equals_full_without_channel_expert():
    cfg = small_cfg(n_targets=1)
    ci = CINetwork(cfg)
    full = DDTNetwork(small_cfg(n_targets=1, use_channel=False))
    ci.eval()
    full.eval()
    x = _x(cfg=cfg)
    np.testing.assert_array_equal(ci(x).data, full(x).data)


def test_recursive_head_network_runs():
    cfg = small_cfg(horizon=120)
    net = DDTNetwork(cfg)
    net.eval()
    assert net(_x(1, cfg)).shape == (1, 120, 2, 3)


# ------------------------------------------------------------------ training


def _windows(n=16, cfg=None, seed=0):
    cfg = cfg or small_cfg()
    rng = np.random.default_rng(seed)
    t = np.arange(cfg.input_len + cfg.horizon)
    phase = rng.uniform(0, 2 * np.pi, (n, 1, cfg.n_targets))
    series = np.sin(2 * np.pi * t[None, :, None] / 12 + phase)
    return series[:, : cfg.input_len], series[:, cfg.input_len :]


def test_teacher_forcing_decay():
    assert teacher_forcing_ratio(0, 30) == 1.0
    assert teacher_forcing_ratio(15, 30) == 0.0
    assert abs(teacher_forcing_ratio(5, 30) - 2 / 3) < 1e-12


def test_zero_learning_rate_leaves_parameters_unchanged():
    net = DDTNetwork(small_cfg())
    before = {k: v.copy() for k, v in net.state_dict().items()}
    x, y = _windows()
    Trainer(net, TrainConfig(epochs=2, lr=0.0, batch_size=8), 2).fit(x, y)
    for k, v in net.state_dict().items():
        assert v.tobytes() == before[k].tobytes()


def test_single_batch_overfit():
    cfg = small_cfg()
    net = DDTNetwork(cfg)
    x, y = _windows(8, cfg)
    start = evaluate(net, x, y, 2, 0)["loss"]
    Trainer(net, TrainConfig(epochs=200, lr=1e-2, batch_size=8, teacher_forcing=False), 2).fit(x, y)
    end = evaluate(net, x, y, 2, 0)["loss"]
    assert end < 0.1 * start


def test_early_stopping_restores_best_state():
    cfg = small_cfg()
    net = DDTNetwork(cfg)
    x, y = _windows(16, cfg)
    xv, yv = _windows(8, cfg, seed=1)
    log = Trainer(net, TrainConfig(epochs=6, lr=5e-3, batch_size=8, patience=2), 2).fit(x, y, xv, yv)
    best = min(r["val_loss"] for r in log.records)
    assert abs(evaluate(net, xv, yv, 2, 0)["loss"] - best) < 1e-12
    assert log.records[log.best_epoch]["val_loss"] == best
    lines = [json.loads(line) for line in log.to_jsonl().splitlines()]
    assert lines[0]["epoch"] == 0 and "tau" in lines[0]


def test_nan_loss_aborts_with_dump(tmp_path):
    net = DDTNetwork(small_cfg())
    x, y = _windows()
    y[0, 0, 0] = np.nan
    dump = tmp_path / "dump.json"
    with pytest.raises(TrainingAborted) as err:
        Trainer(net, TrainConfig(epochs=1, batch_size=32, dump_path=str(dump)), 2).fit(x, y)
    assert err.value.dump["epoch"] == 0 and not err.value.dump["batch_finite"]
    assert json.loads(dump.read_text())["step"] == 0


def test_training_is_bitwise_reproducible():
    def run():
        net = DDTNetwork(small_cfg(seed=2))
        x, y = _windows()
        Trainer(net, TrainConfig(epochs=2, batch_size=8, seed=2), 2).fit(x, y)
        return dumps(net.state_dict())

    assert run() == run()


def test_gradients_reach_metric_parameters():
    cfg = small_cfg()
    net = DDTNetwork(cfg)
    x, y = _windows(4, cfg)
    loss = quantile_loss(net(x, rng=RngStream(0)), y)
    loss.backward()
    assert np.abs(net.mask.metric.offdiag.grad).sum() > 0
    assert np.abs(net.mask.metric.beta_raw.grad).sum() > 0


# ------------------------------------------------------------------ estimator


def test_estimator_fit_predict_and_clone():
    x, y = _windows(16)
    est = DDTForecaster(patch_len=8, stride=4, d_embed=8, d_model=8, spectral_window=8, epochs=2, batch_size=8)
    est.fit(x, y, eval_set=(x[:4], y[:4]))
    assert est.predict(x).shape == y.shape
    assert est.predict_quantiles(x).shape == y.shape + (3,)
    res = est.forecast(x, y)
    assert set(res.metrics) == {"mse", "mae"}
    assert est.score(x, y) == -res.metrics["mse"]
    other = clone(est)
    assert other.get_params() == est.get_params() and not hasattr(other, "network_")
    with pytest.raises(ValueError):
        est.predict(x[:, :10])


def test_estimator_rejects_channel_mismatch():
    x, y = _windows(8)
    with pytest.raises(ValueError):
        DDTForecaster(n_weather=1, patch_len=8, stride=4, spectral_window=8).fit(x, y)


def test_last_value_baseline():
    x = np.random.default_rng(0).standard_normal((3, 10, 2))
    pred = LastValueForecaster(horizon=4).fit(x).predict(x)
    assert pred.shape == (3, 4, 2)
    np.testing.assert_array_equal(pred[:, 2], x[:, -1])


# ------------------------------------------------------------------ checkpoints


def test_checkpoint_roundtrip(tmp_path):
    net = DDTNetwork(small_cfg())
    path = tmp_path / "m.ckpt"
    save(path, net.state_dict(), "abc123")
    state, h = load(path)
    assert h == "abc123" and list(state) == list(net.state_dict())
    for k, v in net.state_dict().items():
        assert state[k].shape == v.shape and state[k].tobytes() == v.tobytes()
    other = DDTNetwork(small_cfg(seed=9))
    other.load_state_dict(state)
    assert dumps(other.state_dict(), "abc123") == path.read_bytes()


def test_checkpoint_scalar_parameter():
    state, _ = loads(dumps({"s": np.array(2.5)}))
    assert state["s"].shape == () and state["s"] == 2.5


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda b: b"XXXXXXXX" + b[8:], "magic"),
        (lambda b: b[:8] + (9).to_bytes(4, "little") + b[12:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ],
)
def test_checkpoint_corruption_is_reported(mutate, msg):
    blob = dumps({"w": np.ones((2, 2))}, "h")
    with pytest.raises(CheckpointError, match=msg):
        loads(mutate(blob))


def test_training_log_stream():
    buf = io.StringIO()
    net = DDTNetwork(small_cfg())
    x, y = _windows(8)
    Trainer(net, TrainConfig(epochs=2, batch_size=8), 2, log_file=buf).fit(x, y)
    assert len(buf.getvalue().splitlines()) == 2
