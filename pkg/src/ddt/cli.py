"""Command-line entry point: ``ddt preprocess|train|eval|forecast|ablate|gradcheck``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig, load_config
from .data.io import DataError
from .diagnostics import gradcheck_report, run_gradcheck
from .estimator import DDTForecaster, LastValueForecaster
from .heads import metrics
from .pipeline import PreparedData, load_prepared, preprocess, save_prepared
from .training import TrainingAborted, destandardize

log = logging.getLogger("ddt")

VARIANT_LABELS = {
    "none": "full",
    "no-dual-mask": "ablation-1",
    "causal-only": "ablation-2",
    "dynamic-only": "ablation-3",
}
DATA_KEYS = ("data.", "window.", "split.", "anomaly.", "impute.", "scale.", "granger.", "augment.")
RESULT_FIELDS = ("dataset", "horizon", "variant", "seed", "mse", "mae", "manifest")


# ---------------------------------------------------------------- helpers


def data_hash(cfg: RunConfig) -> str:
    """Hash of the settings that shape preprocessed artifacts (augmentation draws use the seed)."""
    sub = {k: v for k, v in cfg.manifest().items() if k.startswith(DATA_KEYS) or k == "seed"}
    return hashlib.sha256(json.dumps(sub, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def dataset_name(cfg: RunConfig) -> str:
    return "synthetic" if cfg.synthetic else os.path.splitext(os.path.basename(cfg["data.path"]))[0]


def prepared_for(cfg: RunConfig) -> PreparedData:
    """Load preprocessed artifacts when they match the data settings, else rebuild in memory."""
    pdir = os.path.join(cfg["out"], "preprocessed")
    want = data_hash(cfg)
    if os.path.exists(os.path.join(pdir, "report.json")):
        prep, got = load_prepared(pdir)
        if got == want:
            return prep
        log.info("preprocessed artifacts at %s were built from other data settings; rebuilding in memory", pdir)
    return preprocess(cfg)


def make_estimator(cfg: RunConfig, prep: PreparedData, ablation=None, seed=None) -> DDTForecaster:
    return DDTForecaster(
        n_weather=prep.n_weather,
        n_time=prep.n_time,
        patch_len=cfg["patch.len"],
        stride=cfg["patch.stride"],
        d_embed=cfg["model.d_embed"],
        d_model=cfg["model.d_model"],
        n_heads=cfg["model.heads"],
        depth=cfg["model.depth"],
        top_k=cfg["mask.k"],
        spectral_window=cfg["mask.window"],
        beta_init=cfg["mask.beta"],
        tau0=cfg["mask.tau0"],
        gamma=cfg["mask.gamma"],
        ablation=cfg["ablation"] if ablation is None else ablation,
        mode=cfg["mode"],
        head_mode=cfg["model.head"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        patience=cfg["train.patience"],
        seed=cfg["seed"] if seed is None else seed,
    )


def checkpoint_path(cfg, horizon, ablation, seed) -> str:
    return os.path.join(cfg["out"], "checkpoints", f"h{horizon}_{VARIANT_LABELS[ablation]}_s{seed}.ckpt")


def fit_one(cfg, prep, horizon, ablation, seed, manifest_hash):
    est = make_estimator(cfg, prep, ablation, seed)
    x_tr, y_tr = prep.windows("train", horizon)
    x_va, y_va = prep.windows("val", horizon)
    os.makedirs(os.path.join(cfg["out"], "logs"), exist_ok=True)
    log_path = os.path.join(cfg["out"], "logs", f"h{horizon}_{VARIANT_LABELS[ablation]}_s{seed}.jsonl")
    start = time.perf_counter()
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"manifest_hash": manifest_hash, "horizon": horizon, "variant": VARIANT_LABELS[ablation], "seed": seed}) + "\n")
        est.fit(x_tr, y_tr, eval_set=(x_va, y_va), target_mean=prep.target_mean, target_std=prep.target_std, log_file=fh)
    elapsed = time.perf_counter() - start
    path = checkpoint_path(cfg, horizon, ablation, seed)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    checkpoint.save(path, est.network_.state_dict(), manifest_hash)
    return est, elapsed


def load_estimator(cfg, prep, horizon, ablation, seed, manifest_hash) -> DDTForecaster:
    path = checkpoint_path(cfg, horizon, ablation, seed)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}; run 'ddt train' first")
    state, stored = checkpoint.load(path)
    if stored != manifest_hash:
        raise checkpoint.CheckpointError(
            f"checkpoint {path} was written under manifest {stored[:12]}, current config is {manifest_hash[:12]}"
        )
    est = make_estimator(cfg, prep, ablation, seed)
    est._init_network(prep.n_targets, prep.input_len, horizon)
    est.network_.load_state_dict(state)
    est.network_.eval()
    est.target_mean_, est.target_std_ = prep.target_mean, prep.target_std
    return est


def heldout_metrics(est, prep, horizon):
    x, y = prep.windows("test", horizon)
    return est.forecast(x, y).metrics


def baseline_metrics(prep, horizon):
    x, y = prep.windows("test", horizon)
    pred = LastValueForecaster(horizon, prep.n_targets).fit(x).predict(x)
    return dict(zip(("mse", "mae"), metrics(destandardize(pred, prep.target_mean, prep.target_std),
                                            destandardize(y, prep.target_mean, prep.target_std))))


def format_table(rows, fields) -> str:
    """Aligned plain-text table."""
    cells = [[_fmt(r[f]) for f in fields] for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) if cells else len(f) for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow({f: (repr(r[f]) if isinstance(r[f], float) else r[f]) for f in fields})
    return buf.getvalue()


def write_tables(out_dir, stem, rows, fields):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows, fields))
    text = format_table(rows, fields)
    with open(os.path.join(out_dir, f"{stem}.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def write_manifest(cfg: RunConfig, command: str):
    os.makedirs(cfg["out"], exist_ok=True)
    doc = {"command": command, "manifest_hash": cfg.manifest_hash(), "settings": cfg.manifest()}
    with open(os.path.join(cfg["out"], f"manifest_{command}.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- commands


def cmd_preprocess(cfg: RunConfig, args) -> int:
    prep = preprocess(cfg)
    pdir = os.path.join(cfg["out"], "preprocessed")
    save_prepared(prep, pdir, data_hash(cfg))
    write_manifest(cfg, "preprocess")
    rep = prep.report
    print(f"rows {rep['rows']}  windows {rep['split_sizes']}  anomalies removed {sum(rep['anomalies_removed'].values())}"
          f"  gaps imputed {rep['gaps_imputed']}")
    print(f"artifacts in {pdir}")
    return 0


def _horizons(cfg, args):
    return [args.horizon] if args.horizon else list(cfg["window.horizons"])


def cmd_train(cfg: RunConfig, args) -> int:
    prep = prepared_for(cfg)
    mh = cfg.manifest_hash()
    write_manifest(cfg, "train")
    rows = []
    for h in _horizons(cfg, args):
        est, secs = fit_one(cfg, prep, h, cfg["ablation"], cfg["seed"], mh)
        val = est.training_log_.records[est.training_log_.best_epoch] if est.training_log_.records else {}
        rows.append({"horizon": h, "variant": VARIANT_LABELS[cfg["ablation"]], "seed": cfg["seed"],
                     "best_epoch": est.training_log_.best_epoch, "val_mse": val.get("val_mse", float("nan")),
                     "seconds": round(secs, 2)})
    print(format_table(rows, ("horizon", "variant", "seed", "best_epoch", "val_mse", "seconds")), end="")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    prep = prepared_for(cfg)
    mh = cfg.manifest_hash()
    rows, timings = [], []
    for h in _horizons(cfg, args):
        start = time.perf_counter()
        est = load_estimator(cfg, prep, h, cfg["ablation"], cfg["seed"], mh)
        m = heldout_metrics(est, prep, h)
        rows.append({"dataset": dataset_name(cfg), "horizon": h, "variant": VARIANT_LABELS[cfg["ablation"]],
                     "seed": cfg["seed"], "mse": m["mse"], "mae": m["mae"], "manifest": mh[:16]})
        b = baseline_metrics(prep, h)
        rows.append({"dataset": dataset_name(cfg), "horizon": h, "variant": "last-value", "seed": cfg["seed"],
                     "mse": b["mse"], "mae": b["mae"], "manifest": mh[:16]})
        timings.append({"horizon": h, "variant": VARIANT_LABELS[cfg["ablation"]], "seed": cfg["seed"],
                        "runtime_seconds": round(time.perf_counter() - start, 3), "manifest": mh[:16]})
    print(write_tables(cfg["out"], "results", rows, RESULT_FIELDS), end="")
    write_tables(cfg["out"], "timings", timings, ("horizon", "variant", "seed", "runtime_seconds", "manifest"))
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    prep = prepared_for(cfg)
    mh = cfg.manifest_hash()
    horizons = _horizons(cfg, args)
    os.makedirs(cfg["out"], exist_ok=True)
    for h in horizons:
        est = load_estimator(cfg, prep, h, cfg["ablation"], cfg["seed"], mh)
        x, _ = prep.windows("test", h)
        yq = est.predict_quantiles(x)
        yq = yq * prep.target_std[None, None, :, None] + prep.target_mean[None, None, :, None]
        path = os.path.join(cfg["out"], f"forecast_h{h}.csv")
        starts = prep.starts["test"]
        step = prep.timestamps[1] - prep.timestamps[0]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["manifest", "window", "origin", "step", "timestamp", "channel", "quantile", "value"])
            for b, s in enumerate(starts):
                origin = prep.timestamps[s + prep.input_len - 1]
                for t in range(h):
                    for n in range(prep.n_targets):
                        for qi, q in enumerate(est.quantiles):
                            w.writerow([mh[:16], b, _stamp(origin), t + 1, _stamp(origin + (t + 1) * step),
                                        prep.names[n], q, repr(float(yq[b, t, n, qi]))])
        print(f"wrote {len(starts) * h * prep.n_targets * len(est.quantiles)} rows to {path}")
    return 0


def _stamp(ts) -> str:
    return np.datetime64(int(ts), "s").astype(str).replace("T", " ")


def cmd_ablate(cfg: RunConfig, args) -> int:
    prep = prepared_for(cfg)
    mh = cfg.manifest_hash()
    write_manifest(cfg, "ablate")
    seeds = [args.seed] if args.seed is not None and args.single_seed else list(cfg["ablate.seeds"])
    rows, summary = [], []
    for h in _horizons(cfg, args):
        for ablation, label in VARIANT_LABELS.items():
            if ablation == "dynamic-only":
                log.warning("%s samples its mask without causal restriction; results are not causally valid", label)
            scores = []
            for seed in seeds:
                est, _ = fit_one(cfg, prep, h, ablation, seed, mh)
                m = heldout_metrics(est, prep, h)
                scores.append((m["mse"], m["mae"]))
                rows.append({"dataset": dataset_name(cfg), "horizon": h, "variant": label, "seed": seed,
                             "mse": m["mse"], "mae": m["mae"], "manifest": mh[:16]})
            arr = np.array(scores)
            summary.append({"dataset": dataset_name(cfg), "horizon": h, "variant": label, "seeds": len(seeds),
                            "mse_mean": float(arr[:, 0].mean()), "mse_std": float(arr[:, 0].std()),
                            "mae_mean": float(arr[:, 1].mean()), "mae_std": float(arr[:, 1].std()),
                            "unsafe": ablation == "dynamic-only"})
    write_tables(cfg["out"], "ablation_runs", rows, RESULT_FIELDS)
    fields = ("dataset", "horizon", "variant", "seeds", "mse_mean", "mse_std", "mae_mean", "mae_std", "unsafe")
    print(write_tables(cfg["out"], "ablation", summary, fields), end="")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    records = run_gradcheck(points=20, seed=cfg["seed"])
    text = gradcheck_report(records)
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "gradcheck.json"), "w", encoding="utf-8") as fh:
        fh.write(text)
    for r in records:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['op']:<32} {r['max_rel_error']:.2e}  (tol {r['tolerance']:.0e})"
              + (f"  {r['error']}" if r["error"] else ""))
    return 0 if all(r["passed"] for r in records) else 1


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "forecast": cmd_forecast,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddt", description="Dual-masked multivariate forecasting.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="flat key = value settings file")
    p.add_argument("--seed", type=int, help="override the seed setting")
    p.add_argument("--mode", choices=("full", "ci"), help="override the mode setting")
    p.add_argument("--horizon", type=int, help="restrict to one horizon")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--single-seed", action="store_true", help="ablate: use only --seed instead of ablate.seeds")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "mode": args.mode, "out": args.out})
        if args.horizon is not None and args.horizon not in cfg["window.horizons"]:
            raise ConfigError("--horizon", f"{args.horizon} is not among window.horizons {list(cfg['window.horizons'])}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except (DataError, checkpoint.CheckpointError, FileNotFoundError, TrainingAborted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
