import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import genextreme, norm
from sklearn.neighbors import LocalOutlierFactor

from ddt.data import (
    AugmentSpec,
    DataError,
    GEVBoxplotFilter,
    LabelWindow,
    RankDeficiencyWarning,
    SplitSpec,
    ZScoreScaler,
    augment,
    boxplot_flags,
    dtw_distance,
    gp_posterior,
    granger_screen,
    impute_gp,
    kmeans,
    load_csv,
    lof_scores,
    make_windows,
    spike_fixture,
    stratified_split,
    time_features,
    wasserstein_check,
    wasserstein_to_normal,
    write_csv,
)
from ddt.data.augment import snr_noise_variance, warp_path
from ddt.pipeline import neighbour_residual, screen_channel

# ------------------------------------------------------------------ csv


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_reads_channels_and_missing(tmp_path):
    p = _write(tmp_path, "date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,,4\n2016-07-01 02:00:00,5,6\n")
    batch = load_csv(p, {"b": "covariate_weather"})
    assert batch.shape == (1, 3, 2)
    assert batch.channel_roles == ["target", "covariate_weather"]
    assert batch.mask_missing[0, 1, 0] and np.isnan(batch.values[0, 1, 0])
    assert batch.step == 3600.0


@pytest.mark.parametrize(
    "text,row",
    [
        ("date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,x\n", 2),
        ("date,a\n2016-07-01 00:00:00,1\nnot-a-date,2\n", 2),
        ("date,a\n2016-07-01 01:00:00,1\n2016-07-01 00:00:00,2\n", 2),
        ("date,a\n2016-07-01 00:00:00,1,3\n", 1),
        ("date,a\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 03:00:00,2\n", 3),
    ],
)
def test_load_csv_errors_name_the_row(tmp_path, text, row):
    with pytest.raises(DataError) as err:
        load_csv(_write(tmp_path, text))
    assert err.value.row == row


def test_load_csv_rejects_unknown_schema_column(tmp_path):
    with pytest.raises(DataError, match="unknown"):
        load_csv(_write(tmp_path, "date,a\n2016-07-01 00:00:00,1\n"), {"zz": "target"})


def test_csv_roundtrip(tmp_path):
    ts = 1_467_331_200.0 + 3600.0 * np.arange(4)
    vals = np.array([[0.1, np.nan], [1 / 3, 2.0], [-5.5, 1e-17], [7.0, 8.0]])
    write_csv(tmp_path / "o.csv", ts, vals, ["a", "b"])
    back = load_csv(tmp_path / "o.csv")
    np.testing.assert_array_equal(back.timestamps, ts)
    np.testing.assert_array_equal(back.values[0], vals)


def test_time_features_calendar():
    # 2016-07-04 (a Monday) 06:00 UTC
    ts = np.array([1_467_612_000.0])
    f = time_features(ts, holidays=["2016-07-04"])
    np.testing.assert_allclose(f[0, :2], [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(f[0, 2:4], [0.0, 1.0], atol=1e-12)
    assert f[0, 4] == 1.0


# ------------------------------------------------------------------ LOF


def _lof_naive(x, k):
    m = len(x)
    d = [[float(np.linalg.norm(x[i] - x[j])) for j in range(m)] for i in range(m)]
    nbrs = []
    for i in range(m):
        others = sorted((d[i][j], j) for j in range(m) if j != i)
        nbrs.append([j for _, j in others[:k]])
    kdist = [d[i][nbrs[i][-1]] for i in range(m)]
    lrd = []
    for i in range(m):
        reach = [max(kdist[j], d[i][j]) for j in nbrs[i]]
        lrd.append(1.0 / max(sum(reach) / k, 1e-12))
    return np.array([sum(lrd[j] for j in nbrs[i]) / k / lrd[i] for i in range(m)])


@pytest.mark.parametrize("m,k,dim", [(12, 3, 1), (25, 5, 2), (32, 20, 3)])
def test_lof_matches_naive_loop(m, k, dim):
    x = np.random.default_rng(m).standard_normal((m, dim))
    np.testing.assert_allclose(lof_scores(x, k), _lof_naive(x, k), rtol=1e-9, atol=1e-9)


def test_lof_matches_sklearn():
    x = np.random.default_rng(4).standard_normal((30, 2))
    ref = -LocalOutlierFactor(n_neighbors=5).fit(x).negative_outlier_factor_
    np.testing.assert_allclose(lof_scores(x, 5), ref, rtol=1e-9)


def test_lof_isolated_point_scores_high():
    x = np.concatenate([np.random.default_rng(0).standard_normal(40) * 0.1, [5.0]])
    s = lof_scores(x, 10)
    assert s[-1] > 3 and np.median(s[:-1]) < 1.3


def test_lof_rejects_bad_k():
    with pytest.raises(ValueError):
        lof_scores(np.zeros(5), 5)


# ------------------------------------------------------------------ GEV / boxplot


def test_gumbel_quantile_reference():
    # shape 0 is the Gumbel limit; its 0.99 quantile is -log(-log 0.99)
    assert abs(genextreme.ppf(0.99, 0.0) - 4.600149) < 1e-6


def test_boxplot_flags_outside_whiskers():
    x = np.array([1.0, 2, 3, 4, 5, 6, 7, 8, 100])
    flags = boxplot_flags(x)
    assert flags.tolist() == [False] * 8 + [True]


def test_gev_filter_short_series_falls_back_to_boxplot():
    f = GEVBoxplotFilter().fit(np.arange(10.0))
    assert f.warnings_ and f.upper_ is None


def test_gev_filter_requires_both_rules():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2400)
    f = GEVBoxplotFilter(alpha=0.01, block_size=24).fit(x)
    # 2.8 is outside the IQR whiskers but under the GEV tail quantile
    assert boxplot_flags(np.append(x, 2.8))[-1]
    assert f.lower_ < 2.8 < f.upper_
    assert not f.flags(np.array([2.8]))[0]
    assert f.flags(np.array([20.0, -20.0])).all()


def test_neighbour_residual_excludes_centre():
    x = np.array([0.0, 0, 0, 9, 0, 0, 0])
    r = neighbour_residual(x)
    assert r[3] == 9.0 and np.all(r[[0, 1, 5, 6]] == 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spike_screening_recall_and_false_removal(seed):
    values, mask = spike_fixture(seed=seed)
    for c in range(values.shape[1]):
        remove, _, _ = screen_channel(values[:, c])
        recall = (remove & mask[:, c]).sum() / mask[:, c].sum()
        false_rate = (remove & ~mask[:, c]).sum() / (~mask[:, c]).sum()
        assert recall >= 0.95
        assert false_rate <= 0.01


# ------------------------------------------------------------------ GP imputation


def test_gp_posterior_matches_dense_solve():
    rng = np.random.default_rng(0)
    t = np.arange(20.0)
    y = np.sin(t / 3) + 0.05 * rng.standard_normal(20)
    obs = np.ones(20, bool)
    obs[[4, 5, 11]] = False
    ell, noise = 2.0, 1e-3
    mu, sv = y[obs].mean(), y[obs].var()

    def k(a, b):
        return sv * np.exp(-0.5 * (a[:, None] - b[None, :]) ** 2 / ell**2)

    kinv = np.linalg.inv(k(t[obs], t[obs]) + noise * np.eye(obs.sum()))
    mean = mu + k(t[~obs], t[obs]) @ kinv @ (y[obs] - mu)
    var = sv - np.diag(k(t[~obs], t[obs]) @ kinv @ k(t[obs], t[~obs]))
    m, v = gp_posterior(t[obs], y[obs], t[~obs], ell, noise, sv, mu)
    np.testing.assert_allclose(m, mean, atol=1e-9)
    np.testing.assert_allclose(v, var, atol=1e-9)

    series = y.copy()
    series[~obs] = np.nan
    filled, variance = impute_gp(series, ell, noise)
    np.testing.assert_allclose(filled[~obs], mean, atol=1e-9)
    np.testing.assert_array_equal(filled[obs], y[obs])
    assert np.all(variance[obs] == 0)


def test_impute_long_series_local_solve_is_close_to_truth():
    t = np.arange(3000.0)
    y = np.sin(2 * np.pi * t / 24)
    series = y.copy()
    series[1000:1003] = np.nan
    filled, _ = impute_gp(series, 4.0, 1e-4)
    assert np.abs(filled[1000:1003] - y[1000:1003]).max() < 0.05


def test_impute_needs_observations():
    with pytest.raises(ValueError):
        impute_gp(np.array([np.nan, np.nan, 1.0]))


# ------------------------------------------------------------------ scaling


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_zscore_moments(seed):
    x = np.random.default_rng(seed).standard_normal((200, 3)) * [1, 10, 0.01] + [5, -3, 100]
    z = ZScoreScaler().fit(x).transform(x)
    assert np.abs(z.mean(0)).max() < 1e-9
    assert np.abs(z.std(0) - 1).max() < 1e-9


def test_zscore_constant_channel_passes_through():
    x = np.column_stack([np.arange(10.0), np.full(10, 3.0)])
    s = ZScoreScaler().fit(x)
    assert s.constant_.tolist() == [False, True]
    np.testing.assert_array_equal(s.transform(x)[:, 1], 3.0)
    np.testing.assert_allclose(s.inverse_transform(s.transform(x)), x)


def test_wasserstein_of_shifted_grid_equals_shift():
    n = 500
    grid = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert abs(wasserstein_to_normal(grid + 0.5) - 0.5) < 1e-12
    assert wasserstein_to_normal(grid) < 1e-12
    d, ok = wasserstein_check(grid + 0.5)
    assert not ok and abs(d - 0.5) < 1e-12


def test_wasserstein_check_needs_100_samples():
    with pytest.raises(ValueError):
        wasserstein_check(np.zeros(50))


# ------------------------------------------------------------------ Granger


def test_granger_detects_driver_and_not_reverse():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    y = np.zeros(500)
    for t in range(2, 500):
        y[t] = 0.3 * y[t - 1] + 0.8 * x[t - 1] + 0.1 * rng.standard_normal()
    f, p = granger_screen(x, y, 2)
    assert p < 1e-6 and f > 50
    _, p_rev = granger_screen(y, x, 2)
    assert p_rev > 0.01


def test_granger_f_matches_explicit_regressions():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(60), rng.standard_normal(60)
    p = 2
    tgt = y[p:]
    ylag = np.column_stack([y[1:-1], y[:-2]])
    xlag = np.column_stack([x[1:-1], x[:-2]])
    r = np.column_stack([np.ones(58), ylag])
    u = np.column_stack([r, xlag])
    rss = [np.sum((tgt - d @ np.linalg.lstsq(d, tgt, rcond=None)[0]) ** 2) for d in (r, u)]
    dof = 58 - 5
    f_ref = (rss[0] - rss[1]) / p / (rss[1] / dof)
    f, _ = granger_screen(x, y, p)
    assert abs(f - f_ref) < 1e-9 * max(1, f_ref)


def test_granger_rank_deficient_warns():
    y = np.random.default_rng(0).standard_normal(100)
    with pytest.warns(RankDeficiencyWarning):
        granger_screen(y, y, 2)


def test_granger_short_series_rejected():
    with pytest.raises(ValueError):
        granger_screen(np.zeros(20), np.zeros(20), 2)


# ------------------------------------------------------------------ augmentation


def _dtw_exhaustive(a, b):
    n, m = len(a), len(b)
    best = np.inf

    def walk(i, j, acc):
        nonlocal best
        acc += abs(a[i] - b[j])
        if acc >= best:
            return
        if i == n - 1 and j == m - 1:
            best = acc
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, acc)

    walk(0, 0, 0.0)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_dtw_matches_exhaustive_path_search(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(6), rng.standard_normal(5)
    assert abs(dtw_distance(a, b) - _dtw_exhaustive(a, b)) < 1e-12


def test_dtw_identity_is_zero():
    x = np.random.default_rng(0).standard_normal((10, 2))
    assert dtw_distance(x, x) == 0.0


def test_warp_path_speed_bounds():
    path = warp_path(96, np.random.default_rng(0), 1.2)
    speed = np.diff(path)
    assert path[0] == 0 and abs(path[-1] - 95) < 1e-9
    assert speed.min() >= 1 / 1.2 - 1e-9 and speed.max() <= 1.2 + 1e-9


def test_snr_noise_variance():
    x = np.full((100, 1), 2.0)
    np.testing.assert_allclose(snr_noise_variance(x, 20.0), [0.04])


def test_augment_is_seeded_and_preserves_shape():
    x = np.random.default_rng(0).standard_normal((48, 3))
    a = augment(x, AugmentSpec(copies=2), np.random.default_rng(5))
    b = augment(x, AugmentSpec(copies=2), np.random.default_rng(5))
    assert len(a) == 2 and a[0].shape == x.shape
    np.testing.assert_array_equal(a[1], b[1])


# ------------------------------------------------------------------ windows and split


def test_windows_labels_are_next_values():
    v = np.arange(30.0)[:, None]
    starts = LabelWindow(8, 4, 2).starts(30)
    x, y = make_windows(v, starts, 8, 4)
    assert starts[-1] == 18
    np.testing.assert_array_equal(y[:, 0, 0], x[:, -1, 0] + 1)


def test_label_window_too_short():
    with pytest.raises(ValueError):
        LabelWindow(96, 24).starts(100)


@pytest.mark.parametrize("n", [100, 200, 1000])
def test_split_is_exact_70_15_15(n):
    x = np.random.default_rng(n).standard_normal((n, 6))
    tr, va, te, labels = stratified_split(x, SplitSpec(seed=1))
    assert (len(tr), len(va), len(te)) == (n * 70 // 100, n * 15 // 100, n * 15 // 100)
    assert len(np.intersect1d(tr, va)) == len(np.intersect1d(tr, te)) == 0
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(n))


def test_split_is_deterministic():
    x = np.random.default_rng(0).standard_normal((120, 4))
    a = stratified_split(x, SplitSpec(seed=3))
    b = stratified_split(x, SplitSpec(seed=3))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(ratios=(0.5, 0.5, 0.5))


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.standard_normal((30, 2)) + c for c in ([0, 0], [10, 10], [-10, 10])])
    labels = kmeans(x, 3, seed=0)
    for g in range(3):
        assert len(set(labels[g * 30 : (g + 1) * 30])) == 1
    assert len(set(labels)) == 3


def test_kmeans_empty_cluster_warns():
    x = np.zeros((20, 2))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        labels = kmeans(x, 3)
    assert len(set(labels)) == 1
    assert any("empty" in str(w.message) for w in caught)


def test_spike_fixture_rate():
    values, mask = spike_fixture(length=1000, n_channels=3, rate=0.01, seed=0)
    assert values.shape == (1000, 3)
    assert mask.sum(0).tolist() == [10, 10, 10]

