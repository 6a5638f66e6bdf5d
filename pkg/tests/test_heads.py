import numpy as np
import pytest

from ddt.heads import (
    DirectHead,
    ForecastResult,
    HeadConfig,
    RecursiveHead,
    make_head,
    metrics,
    quantile_loss,
)
from ddt.numerics import Tensor


def _pinball_loop(yhat, y, qs):
    total, count = 0.0, 0
    for idx in np.ndindex(y.shape):
        for qi, q in enumerate(qs):
            u = y[idx] - yhat[idx + (qi,)]
            total += max(q * u, (q - 1) * u)
            count += 1
    return total / count


def test_pinball_reference_cases():
    q = (0.9,)
    assert abs(quantile_loss(np.array([[0.0]]), np.array([1.0]), q).item() - 0.9) < 1e-12
    assert abs(quantile_loss(np.array([[1.0]]), np.array([0.0]), q).item() - 0.1) < 1e-12
    assert quantile_loss(np.array([[2.0]]), np.array([2.0]), q).item() == 0.0


def test_quantile_loss_matches_loop():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((3, 5, 2))
    yhat = rng.standard_normal((3, 5, 2, 3))
    got = quantile_loss(yhat, y).item()
    assert abs(got - _pinball_loop(yhat, y, (0.1, 0.5, 0.9))) < 1e-9


def test_quantile_loss_shape_check():
    with pytest.raises(ValueError):
        quantile_loss(np.zeros((2, 3, 2)), np.zeros((2, 3)))


def test_metrics_match_loops():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    mse, mae = metrics(a, b)
    d = [a[i, j] - b[i, j] for i in range(4) for j in range(6)]
    assert abs(mse - sum(v * v for v in d) / 24) < 1e-12
    assert abs(mae - sum(abs(v) for v in d) / 24) < 1e-12
    with pytest.raises(ValueError):
        metrics(a, b[:2])


def test_head_config_validation_and_auto_mode():
    assert HeadConfig(96).resolved_mode == "direct"
    assert HeadConfig(192).resolved_mode == "recursive"
    assert HeadConfig(24, mode="recursive").overridden
    for bad in (dict(horizon=0), dict(horizon=4, quantiles=(0.5, 0.1)), dict(horizon=4, mode="x"), dict(horizon=4, teacher_forcing_ratio=2)):
        with pytest.raises(ValueError):
            HeadConfig(**bad)


def test_direct_head_refuses_long_horizon_unless_forced():
    with pytest.raises(ValueError):
        DirectHead(4, 8, HeadConfig(192, mode="auto"), 2, np.random.default_rng(0))
    head = DirectHead(4, 8, HeadConfig(192, mode="direct"), 2, np.random.default_rng(0))
    assert head(np.zeros((1, 4, 8))).shape == (1, 192, 2, 3)


def test_make_head_dispatch():
    assert isinstance(make_head(4, 8, HeadConfig(24), 2, np.random.default_rng(0)), DirectHead)
    assert isinstance(make_head(4, 8, HeadConfig(336), 2, np.random.default_rng(0)), RecursiveHead)


def _sig(x):
    return 1 / (1 + np.exp(-x))


def test_recursive_head_matches_manual_unroll():
    rng = np.random.default_rng(0)
    d, n = 4, 2
    head = RecursiveHead(d, HeadConfig(5, mode="recursive"), n, rng)
    enc = rng.standard_normal((3, 6, d))
    start = rng.standard_normal((3, n))
    got = head(enc, start=start).data
    w, b = head.cell.w.data, head.cell.b.data
    wo, bo = head.out.weight.data, head.out.bias.data
    h, c, y = enc.mean(1), np.zeros((3, d)), start
    for s in range(5):
        gates = np.concatenate([y, h], -1) @ w + b
        i, f, o, g = _sig(gates[:, :d]), _sig(gates[:, d : 2 * d]), _sig(gates[:, 2 * d : 3 * d]), np.tanh(gates[:, 3 * d :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out = (h @ wo + bo).reshape(3, n, 3)
        np.testing.assert_allclose(got[:, s], out, atol=1e-12)
        y = out[:, :, 1]


def test_recursive_head_full_teacher_forcing_reads_truth():
    rng = np.random.default_rng(0)
    head = RecursiveHead(4, HeadConfig(3, mode="recursive"), 1, rng)
    enc = rng.standard_normal((1, 2, 4))
    y = rng.standard_normal((1, 3, 1))
    forced = head(enc, targets=y, teacher_forcing=1.0, rng=np.random.default_rng(0), training=True).data
    # step 2 under full forcing equals a free run whose step-1 median was replaced by the truth
    _, h, c = head.step(Tensor(np.zeros((1, 1))), Tensor(enc.mean(1)), Tensor(np.zeros((1, 4))))
    yq, _, _ = head.step(Tensor(y[:, 0]), h, c)
    np.testing.assert_allclose(forced[:, 1], yq.data, atol=1e-12)
    with pytest.raises(ValueError):
        head(enc, teacher_forcing=0.5, rng=np.random.default_rng(0), training=True)


def test_lstm_forget_bias_is_one():
    head = RecursiveHead(4, HeadConfig(2, mode="recursive"), 1, np.random.default_rng(0))
    np.testing.assert_array_equal(head.cell.b.data[4:8], 1.0)


def test_forecast_result_median():
    yhat = np.arange(6.0).reshape(1, 1, 2, 3)
    np.testing.assert_array_equal(ForecastResult(yhat).median, [[[1.0, 4.0]]])
