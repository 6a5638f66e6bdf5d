"""End-to-end preprocessing: screening, imputation, splitting, scaling and reporting."""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data.anomaly import GEVBoxplotFilter, lof_scores
from .data.augment import AugmentSpec, augment
from .data.granger import RankDeficiencyWarning, granger_screen
from .data.impute import impute_gp
from .data.io import DataError, load_csv, time_features, write_csv
from .data.scaling import ZScoreScaler, wasserstein_check
from .data.split import LabelWindow, SplitSpec, make_windows, stratified_split, subset_deviation
from .data.synthetic import synthetic_series

log = logging.getLogger(__name__)

LOF_SEGMENT = 2048  # LOF is scored within segments of this many samples


def neighbour_residual(x, half: int = 2) -> np.ndarray:
    """``x_t`` minus the median of its ``2*half`` neighbours (edges replicated, NaNs ignored)."""
    x = np.asarray(x, float)
    padded = np.pad(x, half, mode="edge")
    win = np.delete(sliding_window_view(padded, 2 * half + 1), half, axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return x - np.nanmedian(win, axis=1)


def screen_channel(x, lof_neighbors=20, lof_threshold=1.5, fit_exclusion=3.0, alpha=0.01, block_size=24):
    """Flag anomalies in one channel.

    Returns ``(remove, lof_flags, warnings)``. LOF on the neighbour residual
    marks candidate noise points; the strongest of them (score above
    ``fit_exclusion``) are left out when the GEV and IQR thresholds are
    fitted. A point is removed when both the GEV tail rule and the IQR rule
    flag its residual.
    """
    x = np.asarray(x, float)
    r = neighbour_residual(x)
    finite = np.isfinite(r)
    scores = np.ones(len(x))
    idx = np.flatnonzero(finite)
    for s in range(0, len(idx), LOF_SEGMENT):
        seg = idx[s : s + LOF_SEGMENT]
        if len(seg) > lof_neighbors + 1:
            scores[seg] = lof_scores(r[seg], lof_neighbors)
    lof_flags = finite & (scores > lof_threshold)
    fit_mask = finite & (scores <= fit_exclusion)
    filt = GEVBoxplotFilter(alpha=alpha, block_size=block_size).fit(r[fit_mask])
    remove = np.zeros(len(x), bool)
    remove[finite] = filt.flags(r[finite])
    return remove, lof_flags, list(filt.warnings_)


@dataclass
class PreparedData:
    """Standardized channels plus window bookkeeping.

    ``values`` is ``T x C`` with targets first, then weather, then calendar
    features; ``starts`` maps subset name to window start indices.
    """

    values: np.ndarray
    timestamps: np.ndarray
    names: list
    n_targets: int
    n_weather: int
    n_time: int
    input_len: int
    max_horizon: int
    starts: dict
    mean: np.ndarray
    std: np.ndarray
    report: dict = field(default_factory=dict)
    augmented: np.ndarray | None = None  # extra train windows, n x (L + Hmax) x C

    def windows(self, subset: str, horizon: int):
        if horizon > self.max_horizon:
            raise ValueError(f"horizon {horizon} exceeds prepared maximum {self.max_horizon}")
        x, y = make_windows(self.values, self.starts[subset], self.input_len, horizon)
        y = y[..., : self.n_targets]
        if subset == "train" and self.augmented is not None and len(self.augmented):
            ax = self.augmented[:, : self.input_len]
            ay = self.augmented[:, self.input_len : self.input_len + horizon, : self.n_targets]
            x, y = np.concatenate([x, ax]), np.concatenate([y, ay])
        return x, y

    @property
    def target_mean(self):
        return self.mean[: self.n_targets]

    @property
    def target_std(self):
        return self.std[: self.n_targets]


def _read_source(cfg):
    if cfg.synthetic:
        ts, vals = synthetic_series(cfg["data.synthetic_length"], cfg["data.synthetic_channels"], seed=cfg["data.synthetic_seed"])
        names = [f"ch{i}" for i in range(vals.shape[1])]
        return ts, vals, names, len(names), 0
    targets, weather = list(cfg["data.targets"]), list(cfg["data.weather"])
    schema = {n: "target" for n in targets}
    schema.update({n: "covariate_weather" for n in weather})
    batch = load_csv(cfg["data.path"], schema)
    missing = [n for n in targets + weather if n not in batch.channel_names]
    if missing:
        raise DataError(f"columns not found: {missing}")
    cols = [batch.channel_names.index(n) for n in targets + weather]
    return batch.timestamps, batch.values[0][:, cols], targets + weather, len(targets), len(weather)


def preprocess(cfg) -> PreparedData:
    """Run the full preprocessing chain for a validated :class:`RunConfig`."""
    ts, raw, names, n_targets, n_weather = _read_source(cfg)
    report = {"rows": int(len(ts)), "channels": names, "missing_in_source": int(np.isnan(raw).sum())}
    values = raw.copy()

    # screening
    removed, lof_marked, fallbacks = {}, {}, []
    for c, name in enumerate(names):
        rm, lof, warn = screen_channel(
            values[:, c],
            cfg["anomaly.lof_neighbors"],
            cfg["anomaly.lof_threshold"],
            cfg["anomaly.fit_exclusion"],
            cfg["anomaly.gev_alpha"],
            cfg["anomaly.block_size"],
        )
        values[rm, c] = np.nan
        removed[name] = int(rm.sum())
        lof_marked[name] = int(lof.sum())
        fallbacks += [f"{name}: {w}" for w in warn]
    report["anomalies_removed"] = removed
    report["lof_marked"] = lof_marked
    report["gev_fallbacks"] = fallbacks

    # imputation
    gaps = np.isnan(values)
    values, variance = impute_gp(values, cfg["impute.lengthscale"], cfg["impute.noise_var"])
    report["gaps_imputed"] = int(gaps.sum())
    report["impute_variance_mean"] = float(variance[gaps].mean()) if gaps.any() else 0.0

    # windows and split
    input_len, hmax = cfg["window.input_len"], max(cfg["window.horizons"])
    starts = LabelWindow(input_len, hmax, cfg["window.stride"]).starts(len(values))
    win = make_windows(values[:, :n_targets], starts, input_len, hmax)
    flat = np.concatenate(win, axis=1)
    spec = SplitSpec(tuple(cfg["split.ratios"]), cfg["split.clusters"], cfg["split.seed"])
    tr, va, te, labels = stratified_split(flat, spec)
    report["split_sizes"] = {"train": int(len(tr)), "val": int(len(va)), "test": int(len(te))}
    report["cluster_sizes"] = np.bincount(labels).tolist()
    report["subset_deviation"] = dict(zip(("train", "val", "test"), subset_deviation(flat, [tr, va, te])))

    # scaling on train coverage only
    covered = np.zeros(len(values), bool)
    for s in starts[tr]:
        covered[s : s + input_len + hmax] = True
    scaler = ZScoreScaler().fit(values[covered])
    std_values = scaler.transform(values)
    report["constant_channels"] = [n for n, c in zip(names, scaler.constant_) if c]
    report["wasserstein"] = {}
    for c, name in enumerate(names):
        d, ok = wasserstein_check(std_values[covered, c], cfg["scale.wasserstein_threshold"])
        report["wasserstein"][name] = {"distance": d, "pass": bool(ok)}

    # causal screening (report only)
    report["granger"] = {}
    lag = cfg["granger.lag"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        for i in range(n_targets):
            for j, src in enumerate(names):
                if i == j:
                    continue
                f, p = granger_screen(std_values[covered, j], std_values[covered, i], lag)
                report["granger"][f"{src}->{names[i]}"] = {"F": f, "p": p}
    report["granger_warnings"] = len(caught)

    # calendar features
    n_time = 0
    if cfg["data.time_features"]:
        tf = time_features(ts, cfg["data.holidays"])
        std_values = np.concatenate([std_values, tf], axis=1)
        names = names + ["hour_sin", "hour_cos", "weekday_sin", "weekday_cos", "holiday"]
        n_time = tf.shape[1]
    mean = np.concatenate([scaler.mean_, np.zeros(n_time)])
    std = np.concatenate([np.where(scaler.constant_, 1.0, scaler.scale_), np.ones(n_time)])

    prepared = PreparedData(
        std_values, np.asarray(ts, float), names, n_targets, n_weather, n_time, input_len, hmax,
        {"train": starts[tr], "val": starts[va], "test": starts[te]}, mean, std, report,
    )
    prepared.augmented = _augment_train(prepared, cfg)
    report["augmented_windows"] = 0 if prepared.augmented is None else int(len(prepared.augmented))
    return prepared


def _augment_train(prep: PreparedData, cfg):
    copies = cfg["augment.copies"]
    if copies <= 0:
        return None
    ops = set(cfg["augment.ops"])
    spec = AugmentSpec(
        dtw_warp="dtw_warp" in ops,
        log_scale="log_scale" in ops,
        snr_noise="snr_noise" in ops,
        max_stretch=cfg["augment.max_stretch"],
        max_scale=cfg["augment.max_scale"],
        snr_db=cfg["augment.snr_db"],
        copies=copies,
    )
    rng = np.random.default_rng([cfg["seed"], 300])
    span = prep.input_len + prep.max_horizon
    n_series = prep.n_targets + prep.n_weather
    out = []
    for s in prep.starts["train"]:
        w = prep.values[s : s + span]
        for a in augment(w[:, :n_series], spec, rng):
            out.append(np.concatenate([a, w[:, n_series:]], axis=1))
    return np.stack(out)


# ---------------------------------------------------------------- persistence


def save_prepared(prep: PreparedData, out_dir, manifest_hash: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "processed.csv"), prep.timestamps, prep.values, prep.names)
    for subset, starts in prep.starts.items():
        with open(os.path.join(out_dir, f"{subset}.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write("start,date\n")
            for s in starts:
                stamp = np.datetime64(int(prep.timestamps[s]), "s").astype(str).replace("T", " ")
                fh.write(f"{int(s)},{stamp}\n")
    meta = {
        "manifest_hash": manifest_hash,
        "names": prep.names,
        "n_targets": prep.n_targets,
        "n_weather": prep.n_weather,
        "n_time": prep.n_time,
        "input_len": prep.input_len,
        "max_horizon": prep.max_horizon,
        "mean": prep.mean.tolist(),
        "std": prep.std.tolist(),
        "report": prep.report,
    }
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    if prep.augmented is not None:
        np.save(os.path.join(out_dir, "augmented.npy"), prep.augmented)


def load_prepared(out_dir) -> tuple[PreparedData, str]:
    with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    batch = load_csv(os.path.join(out_dir, "processed.csv"))
    starts = {}
    for subset in ("train", "val", "test"):
        with open(os.path.join(out_dir, f"{subset}.csv"), encoding="utf-8") as fh:
            next(fh)
            starts[subset] = np.array([int(line.split(",")[0]) for line in fh if line.strip()], dtype=int)
    aug_path = os.path.join(out_dir, "augmented.npy")
    prep = PreparedData(
        batch.values[0], batch.timestamps, meta["names"], meta["n_targets"], meta["n_weather"], meta["n_time"],
        meta["input_len"], meta["max_horizon"], starts, np.asarray(meta["mean"]), np.asarray(meta["std"]),
        meta["report"], np.load(aug_path) if os.path.exists(aug_path) else None,
    )
    return prep, meta["manifest_hash"]
