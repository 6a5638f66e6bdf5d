import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddt.masking import (
    EPS,
    MaskBuilder,
    MetricState,
    build_causal_mask,
    dump_masks,
    energy_weights,
    fuse_masks,
    mahalanobis_matrix,
    masked_attention,
    sample_dynamic_mask,
    spectral_features,
    temperature,
    token_features,
)
from ddt.numerics import NEG_INF, RngStream, Tensor, softmax


def _attention_loop(q, k, v, add):
    b, h, p, d = q.shape
    out = np.zeros_like(v)
    for bi in range(b):
        for hi in range(h):
            for i in range(p):
                s = np.array([sum(q[bi, hi, i, c] * k[bi, hi, j, c] for c in range(d)) / math.sqrt(d) for j in range(p)])
                s = s + add[i]
                w = np.exp(s - s.max())
                w /= w.sum()
                for j in range(p):
                    out[bi, hi, i] += w[j] * v[bi, hi, j]
    return out


@pytest.mark.parametrize("p,d", [(1, 2), (5, 3), (12, 4)])
def test_attention_matches_loop(p, d):
    rng = np.random.default_rng(p)
    q, k, v = (rng.standard_normal((2, 2, p, d)) for _ in range(3))
    bias = rng.standard_normal((p, p))
    fused = build_causal_mask(p)
    got = masked_attention(q, k, v, fused=fused, bias=bias).data
    np.testing.assert_allclose(got, _attention_loop(q, k, v, bias + fused), atol=1e-9)


def test_causal_mask_layout():
    m = build_causal_mask(4)
    assert (m[np.tril_indices(4)] == 0).all()
    assert (m[np.triu_indices(4, 1)] == NEG_INF).all()
    with pytest.raises(ValueError):
        build_causal_mask(0)


def test_temperature_schedule():
    assert abs(temperature(1.0, 0.95, 10) - 0.59874) < 1e-5
    assert abs(temperature(1.0, 0.95, 20) - 0.3585) < 1e-4
    assert temperature(2.0, 0.95, 0) == 2.0


def test_metric_is_positive_definite():
    st_ = MetricState(5, rng=np.random.default_rng(0))
    st_.diag_raw.data[:] = -30.0  # softplus keeps the diagonal strictly positive
    assert np.linalg.eigvalsh(st_.metric()).min() > 0


def test_mahalanobis_matches_pairwise_loop():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((7, 3))
    lower = np.tril(rng.standard_normal((3, 3)))
    a = lower.T @ lower
    got = mahalanobis_matrix(f, lower).data
    for i in range(7):
        for j in range(7):
            diff = f[i] - f[j]
            assert abs(got[i, j] - math.sqrt(diff @ a @ diff)) < 1e-9


def test_energy_weights_sum_to_one_and_handle_silence():
    x = np.zeros((1, 8, 3))
    x[0, :, 0] = 1.0
    np.testing.assert_allclose(energy_weights(x), [[1.0, 0.0, 0.0]])
    np.testing.assert_allclose(energy_weights(np.zeros((8, 2))), [0.5, 0.5])


def test_spectral_features_are_causal_and_sized():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 40, 3))
    f = spectral_features(x, 16)
    assert f.shape == (2, 40, 3 + 9)
    x2 = x.copy()
    x2[:, 25:] = 99.0
    np.testing.assert_array_equal(spectral_features(x2, 16)[:, :25], f[:, :25])


def test_spectral_features_window_too_long():
    with pytest.raises(ValueError):
        spectral_features(np.zeros((8, 2)), 16)


def test_token_features_pick_patch_ends():
    f = np.arange(20.0)[:, None]
    np.testing.assert_array_equal(token_features(f, 4, 2, 9)[:, 0], [3, 5, 7, 9, 11, 13, 15, 17, 19])


def _state(tau0=1.0):
    return MetricState(3, tau0=tau0, rng=np.random.default_rng(0))


@pytest.mark.parametrize("k", [1, 2, 3, 7])
def test_hard_rows_have_min_k_t_plus_1_ones(k):
    d = np.abs(np.random.default_rng(k).standard_normal((2, 9, 9)))
    d = d + d.transpose(0, 2, 1)
    dyn = sample_dynamic_mask(d, _state(), RngStream(0), k, mode="train")
    for t in range(9):
        row = dyn.hard[:, t]
        assert (row.sum(-1) == min(k, t + 1)).all()
        assert (row[:, t + 1 :] == 0).all()
        assert (row[:, t] == 1).all()
    assert set(np.unique(dyn.hard)) <= {0.0, 1.0}


def test_non_causal_rows_have_k_ones():
    d = np.abs(np.random.default_rng(0).standard_normal((6, 6)))
    dyn = sample_dynamic_mask(d, _state(), None, 3, causal=False)
    assert (dyn.hard.sum(-1) == 3).all()


def test_eval_mode_is_deterministic_and_needs_no_rng():
    d = np.abs(np.random.default_rng(0).standard_normal((6, 6)))
    a = sample_dynamic_mask(d, _state(), None, 2)
    b = sample_dynamic_mask(d, _state(), None, 2)
    np.testing.assert_array_equal(a.hard, b.hard)
    with pytest.raises(ValueError):
        sample_dynamic_mask(d, _state(), None, 2, mode="train")
    with pytest.raises(ValueError):
        sample_dynamic_mask(d, _state(), None, 0)


def test_relaxed_rows_are_causal_distributions():
    d = np.abs(np.random.default_rng(0).standard_normal((5, 5)))
    dyn = sample_dynamic_mask(d, _state(), RngStream(1), 2, mode="train")
    r = dyn.relaxed.data
    np.testing.assert_allclose(r.sum(-1), 1.0, atol=1e-12)
    assert (r[np.triu_indices(5, 1)] == 0).all()


def test_fused_log_penalty_value():
    hard = np.array([[1.0, 0.0], [0.0, 1.0]])
    fused = fuse_masks(build_causal_mask(2), hard).data
    assert abs(fused[1, 0] - math.log(EPS)) < 1e-6
    assert abs(fused[1, 0] - (-18.4207)) < 1e-4
    assert fused[0, 1] <= NEG_INF / 2
    assert abs(fused[1, 1]) < 1e-7


def test_fused_attention_rows_sum_to_one_with_exact_future_zeros():
    rng = np.random.default_rng(0)
    builder = MaskBuilder(4, 3, "dual", rng=rng)
    builder.eval()
    fused = builder(rng.standard_normal((2, 8, 4)))
    q, k, v = (rng.standard_normal((2, 1, 8, 4)) for _ in range(3))
    _, w = masked_attention(q, k, v, fused.data[:, None], return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)
    assert (w.data[..., np.triu_indices(8, 1)[0], np.triu_indices(8, 1)[1]] == 0).all()


def test_entropy_falls_as_temperature_drops():
    logits = np.random.default_rng(0).standard_normal(10)

    def entropy(tau):
        p = softmax(Tensor(logits / tau)).data
        return -(p * np.log(np.maximum(p, 1e-300))).sum()

    taus = np.geomspace(5.0, 0.05, 12)
    ent = [entropy(t) for t in taus]
    assert all(a > b for a, b in zip(ent, ent[1:]))


@pytest.mark.parametrize("mode,causal,dynamic", [("dual", True, True), ("causal", True, False), ("dynamic", False, True), ("none", False, False)])
def test_mask_builder_modes(mode, causal, dynamic):
    builder = MaskBuilder(3, 2, mode, rng=np.random.default_rng(0))
    out = builder(np.random.default_rng(1).standard_normal((1, 5, 3)), rng=RngStream(0))
    assert builder.causal is causal and builder.uses_dynamic is dynamic
    if mode == "none":
        assert out is None
    else:
        future = out.data[..., 0, 4]
        assert (future <= NEG_INF / 2).all() if causal else (future > NEG_INF / 2).all()


def test_mask_builder_rejects_unknown_mode():
    with pytest.raises(ValueError):
        MaskBuilder(3, 2, "sideways")


def test_dump_masks_json():
    d = np.abs(np.random.default_rng(0).standard_normal((3, 3)))
    dyn = sample_dynamic_mask(d, _state(), None, 2)
    fused = fuse_masks(build_causal_mask(3), dyn.mask)
    doc = json.loads(dump_masks(fused, dyn))
    assert doc["shape"] == [3, 3] and doc["fused"][0][1] is None and doc["k"] == 2
    assert doc["hard"][2][2] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_hard_mask_property(p, k, seed):
    d = np.abs(np.random.default_rng(seed).standard_normal((p, p)))
    dyn = sample_dynamic_mask(d, _state(), RngStream(seed), k, mode="train")
    np.testing.assert_array_equal(dyn.hard.sum(-1), np.minimum(k, np.arange(1, p + 1)))
