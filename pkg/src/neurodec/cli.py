"""Command-line entry point: ``neurodec <command> [options]``.

Exit codes: 0 on success, 2 for bad arguments, 3 when the data violate a
contract (the message names the broken invariant).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, models, pipeline, preprocess, scaling
from .datasets import (
    DATASETS, DeviceKind, SplitAssignment, matched_trials, read_trials_csv, subsample_test, write_trials_csv,
)
from .errors import ContractViolation, TrainingDiverged
from .synthgen import SynthConfig, device_presets, generate_continuous

log = logging.getLogger("neurodec")

DEVICES = [d.value for d in DeviceKind]
SCOPES = {"single": "single_trial", "subject": "subject_average", "instance": "instance_average"}


def _set_threads():
    n = os.environ.get("NEURODEC_THREADS")
    if n:
        import torch

        torch.set_num_threads(max(1, int(n)))


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ContractViolation(f"{path}: invalid JSON ({e})") from e


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out, inputs, seeds=None):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out") and not k.startswith("_")}
    seeds = seeds if seeds is not None else ({"seed": args.seed} if getattr(args, "seed", None) is not None else {})
    io.write_run_manifest(out, args.command, cfg, seeds, [str(p) for p in inputs], args._started)


# -- synth ---------------------------------------------------------------------


def _synth_config(args) -> SynthConfig:
    base = device_presets()[DeviceKind(args.device or "eeg")]
    if args.config:
        overrides = _read_json(args.config)
        if "device" in overrides and args.device is None:
            base = device_presets()[DeviceKind(overrides["device"])]
        try:
            base = replace(base, **overrides)
        except TypeError as e:
            raise ContractViolation(f"unknown SynthConfig field in {args.config}: {e}") from e
    return replace(base, seed=args.seed)


def cmd_synth(args):
    cfg = _synth_config(args)
    out = _out(args)
    lead_in = max(1.0, -cfg.window[0] + 0.5)
    recs, emb, trials, fwd = generate_continuous(cfg, lead_in=lead_in)
    tensors = {"positions": fwd.positions}
    for s, rec in enumerate(recs):
        rows = sorted((t for t in trials if t.subject_id == s), key=lambda t: t.onset_time)
        tensors[f"subject_{s}"] = rec.data
        tensors[f"onsets_{s}"] = rec.onsets.astype(np.float64)
        tensors[f"onset_times_{s}"] = np.array([lead_in + t.onset_time for t in rows])
    meta = {"config": cfg.to_dict(), "sampling_rate": recs[0].sampling_rate, "lead_in": lead_in}
    io.write_tensors(out / "raw", tensors, meta)
    io.write_tensors(out / "embeddings", {"embeddings": emb})
    write_trials_csv(trials, out / "trials.csv")
    _write_json(out / "synth_config.json", cfg.to_dict())
    _manifest(args, out, [args.config] if args.config else [])
    print(f"wrote {len(trials)} trials, {cfg.n_subjects} subjects to {out}")


# -- preprocess ----------------------------------------------------------------


def cmd_preprocess(args):
    src = Path(args.input)
    raw, meta = io.read_tensors(src / "raw")
    cfg = SynthConfig.from_dict(meta["config"])
    trials = read_trials_csv(src / "trials.csv")
    report = preprocess.PreprocessReport()
    X, kept = [], []
    for s in range(cfg.n_subjects):
        rows = sorted((i for i, t in enumerate(trials) if t.subject_id == s), key=lambda i: trials[i].onset_time)
        data = raw[f"subject_{s}"]
        if cfg.device.is_fmri:
            tr = 1.0 / meta["sampling_rate"]
            series = preprocess.fmri_detrend_zscore(data, tr, args.drift_cutoff, report)
            ep = preprocess.fmri_epoch(series, tr, cfg.window, raw[f"onset_times_{s}"], report)
        else:
            rec = preprocess.ContinuousRecording(
                data, meta["sampling_rate"], raw[f"onsets_{s}"].astype(np.int64),
                np.array([trials[i].image_id for i in rows]), raw["positions"],
            )
            rec = preprocess.highpass_downsample(rec, args.highpass, cfg.sampling_rate, report)
            rec = preprocess.robust_scale_clip(rec, preprocess.CLIP_VALUE, report)
            ep = preprocess.epoch(rec, cfg.window, None, report)
        X.append(ep.data)
        kept.extend(rows[j] for j in ep.trial_ids)
    out = _out(args)
    X = np.concatenate(X)
    io.write_tensors(
        out / "epochs", {"X": X, "positions": raw["positions"]},
        {"config": cfg.to_dict(), "window": list(cfg.window), "rate": cfg.sampling_rate},
    )
    shutil.copytree(src / "embeddings", out / "embeddings", dirs_exist_ok=True)
    write_trials_csv([trials[i] for i in kept], out / "trials.csv")
    (out / "preprocess_report.json").write_text(report.to_json() + "\n")
    _manifest(args, out, [src])
    print(f"{X.shape[0]} epochs of shape {X.shape[1:]}; dropped {len(report.dropped)}")


def _load_epochs(path):
    path = Path(path)
    tensors, meta = io.read_tensors(path / "epochs")
    emb, _ = io.read_tensors(path / "embeddings")
    trials = read_trials_csv(path / "trials.csv")
    if len(trials) != tensors["X"].shape[0]:
        raise ContractViolation(f"{path}: trials.csv rows ({len(trials)}) != epochs ({tensors['X'].shape[0]})")
    return tensors, meta, emb["embeddings"], trials


# -- split ---------------------------------------------------------------------


def cmd_split(args):
    _, _, _, trials = _load_epochs(args.input)
    split = pipeline.category_split(trials, args.seed, args.test_fraction, args.valid_fraction)
    if args.matched:
        pool = matched_trials(None, trials, args.matched, args.seed, ids=split.train + split.valid)
        rng = np.random.default_rng(args.seed)
        n_valid = int(np.floor(args.valid_fraction * len(pool)))
        perm = rng.permutation(len(pool))
        split = SplitAssignment(
            train=sorted(pool[j] for j in perm[n_valid:]), valid=sorted(pool[j] for j in perm[:n_valid]),
            test=split.test,
        )
    if args.test_unique:
        split = replace(split, test=subsample_test(trials, args.test_unique, args.seed, ids=split.test))
    test_cats = {trials[i].category_id for i in split.test}
    split.check(trials, test_cats)
    out = _out(args)
    (out / "split.json").write_text(split.to_json() + "\n")
    _manifest(args, out, [args.input])
    print(f"train {len(split.train)}  valid {len(split.valid)}  test {len(split.test)}")


def _load_split(path) -> SplitAssignment:
    return SplitAssignment.from_json(Path(path).read_text())


# -- train ---------------------------------------------------------------------


def _views(tensors, meta, mode, width, start):
    ep = preprocess.EpochSet(
        tensors["X"], tuple(meta["window"]), meta["rate"], np.arange(tensors["X"].shape[0]),
    )
    return preprocess.window_views(ep, mode, width, start)


def cmd_train(args):
    tensors, meta, emb, trials = _load_epochs(args.input)
    split = _load_split(args.split)
    cfg = SynthConfig.from_dict(meta["config"])
    out = _out(args)
    windows = []
    for k, view in enumerate(_views(tensors, meta, args.window, args.width, args.start)):
        wdir = out / f"window_{k}"
        if args.model == "ridge":
            fits = pipeline.ridge_fit_subjects(view.data, trials, emb, split.train + split.valid)
            t = {}
            for s, fit in fits.items():
                t[f"weights_{s}"] = fit.weights
                t[f"intercept_{s}"] = fit.intercept
            io.write_tensors(wdir, t, {"alphas": {str(s): f.alpha_selected for s, f in fits.items()}})
        else:
            mcfg = pipeline.desk_model_config(cfg, timepoints=view.n_times)
            if args.config:
                mcfg = replace(mcfg, **_read_json(args.config))
            positions = None if cfg.device.is_fmri else tensors["positions"]
            result = pipeline.deep_fit(view.data, trials, emb, split, mcfg, positions, args.seed)
            io.save_checkpoint(result.model, wdir, {"best_epoch": result.best_epoch})
            from .training import write_history

            write_history(result.history, out / f"history_{k}.csv")
        windows.append({"index": k, "label": view.label, "start": view.window[0], "end": view.window[1]})
    _write_json(out / "windows.json", {"model": args.model, "mode": args.window, "width": args.width,
                                        "start": args.start, "windows": windows})
    _manifest(args, out, [args.input, args.split] + ([args.config] if args.config else []))
    print(f"trained {len(windows)} {args.model} decoder(s) -> {out}")


# -- eval ----------------------------------------------------------------------


def _ridge_fits_from(wdir):
    from .linear import RidgeFit

    t, meta = io.read_tensors(wdir)
    fits = {}
    for s, alpha in meta["alphas"].items():
        fits[int(s)] = RidgeFit(t[f"weights_{s}"], t[f"intercept_{s}"], alpha, None, None)
    return fits


def cmd_eval(args):
    tensors, meta, emb, trials = _load_epochs(args.input)
    split = _load_split(args.split)
    cfg = SynthConfig.from_dict(meta["config"])
    mdir = Path(args.model_dir)
    info = _read_json(mdir / "windows.json")
    if args.window is not None and args.window != info["mode"]:
        raise ContractViolation(f"--window {args.window} does not match the trained window mode {info['mode']!r}")
    views = _views(tensors, meta, info["mode"], info["width"], info["start"])
    if len(views) != len(info["windows"]):
        raise ContractViolation("epoch windows no longer match the trained decoders")
    scope = SCOPES[args.averaging]
    n_train = len(split.train) + len(split.valid)
    records = []
    for w, view in zip(info["windows"], views):
        wdir = mdir / f"window_{w['index']}"
        if info["model"] == "ridge":
            preds = pipeline.ridge_predict(_ridge_fits_from(wdir), view.data, trials, split.test)
        else:
            model, _ = io.load_checkpoint(wdir)
            preds = pipeline.deep_predict(model, view.data, trials, split.test, args.head)
        scores = pipeline.score(preds, emb, scope)
        records.append(pipeline.record(f"synthetic-{cfg.device.value}", cfg, n_train, view.window, scope,
                                       args.seed, scores))
    out = _out(args)
    pipeline.write_metrics(records, out / "metrics.csv")
    _manifest(args, out, [args.input, args.split, args.model_dir])
    for r in records:
        print(f"[{r.window_start:+.3f}, {r.window_end:+.3f}] {r.averaging}: R={r.pearson_r:.4f} "
              f"top1={r.top1:.3f} top5={r.top5:.3f}")


# -- scale-fit -----------------------------------------------------------------


def _fit_points(records, x_kind, averaging, rates):
    by_dev: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        if r.averaging != averaging:
            continue
        x = float(r.n_train_trials)
        if x_kind in ("hours", "usd"):
            x = scaling.recording_time(x, pipeline.soa_for(r.dataset, r.device))
        if x_kind == "usd":
            x *= rates[r.device]
        by_dev.setdefault(r.device, []).append((x, r.pearson_r))
    return by_dev


def _fits(records, x_kind, averaging, rates):
    points = _fit_points(records, x_kind, averaging, rates)
    if not points:
        raise ContractViolation(f"no metric rows with averaging {averaging!r}")
    return {d: scaling.fit_loglinear(p, x_kind, d) for d, p in sorted(points.items())}


def _metric_records(paths):
    paths = paths or [pipeline.bundled_metrics_path()]
    return [r for p in paths for r in pipeline.read_metrics(p)], paths


def cmd_scale_fit(args):
    records, paths = _metric_records(args.metrics)
    rates = scaling.load_cost_table(args.rates)
    fits = _fits(records, args.x, SCOPES[args.averaging], rates)
    result = {"fits": [f.to_dict() for f in fits.values()]}
    if args.threshold is not None:
        th = {}
        for d, f in fits.items():
            try:
                th[d] = scaling.solve_threshold(f, args.threshold)
            except ContractViolation as e:
                th[d] = None
                log.warning("%s: %s", d, e)
        result["thresholds"] = {"r_star": args.threshold, "x_kind": args.x, "x": th}
    result["dataset_costs_usd"] = {name: scaling.dataset_cost(name, rates=rates) for name in DATASETS}
    text = json.dumps(result, indent=1, sort_keys=True)
    print(text)
    if args.out:
        out = _out(args)
        (out / "fits.json").write_text(text + "\n")
        _manifest(args, out, paths + ([args.rates] if args.rates else []))


# -- paramcount ----------------------------------------------------------------


def cmd_paramcount(args):
    device = "fmri" if args.device.startswith("fmri") else args.device
    config = models.architecture(device, args.size, args.labeling)
    model = models.build_model(config, device="meta")
    labels = models.MEEG_LAYERS if device != "fmri" else models.FMRI_LAYERS
    counts = models.layer_counts(model)
    width = max(len(v) for v in labels.values())
    for name, n in counts.items():
        print(f"{labels[name]:<{width}}  {n:>13,}")
    total = models.param_count(model)
    print(f"{'Total':<{width}}  {total:>13,}")
    if args.out:
        out = _out(args)
        _write_json(out / "paramcount.json", {"config": config.to_dict(), "layers": dict(counts), "total": total})
        _manifest(args, out, [])


# -- report --------------------------------------------------------------------


def cmd_report(args):
    from . import plotting

    records, paths = _metric_records(args.metrics)
    out = _out(args)
    rows = pipeline.aggregate_metrics(records)
    pipeline.write_aggregate(rows, out / "aggregate.csv")
    written = ["aggregate.csv"]
    scope = SCOPES[args.averaging]
    counts: dict[str, set] = {}
    for r in rows:
        if r["averaging"] == scope:
            counts.setdefault(r["device"], set()).add(r["n_train_trials"])
    fittable = [r for r in records if len(counts.get(r.device, ())) >= 3]
    fits = _fits(fittable, "trials", scope, scaling.HOURLY_COST_USD) if fittable else {}
    _write_json(out / "fits.json", {"fits": [f.to_dict() for f in fits.values()]})
    written.append("fits.json")
    if counts:
        plotting.scaling_figure(rows, fits, out / "scaling.png", scope)
        written.append("scaling.png")
    multi_window = {(r["device"], r["n_train_trials"], r["averaging"]) for r in rows}
    if len(multi_window) < len(rows):
        plotting.window_figure(rows, out / "windows.png")
        written.append("windows.png")
    _manifest(args, out, paths)
    print("wrote " + ", ".join(written) + f" to {out}")


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurodec", description="Brain-to-image decoding benchmark kit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help, seed_required=True, out_required=True):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        sp.add_argument("--out", required=out_required, help="output directory")
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic continuous dataset")
    sp.add_argument("--config", help="SynthConfig JSON (fields override the device preset)")
    sp.add_argument("--device", choices=DEVICES)

    sp = add("preprocess", cmd_preprocess, "filter, scale and epoch a synthetic dataset", seed_required=False)
    sp.add_argument("--input", required=True)
    sp.add_argument("--highpass", type=float, default=0.1, help="M/EEG high-pass cutoff (Hz)")
    sp.add_argument("--drift-cutoff", type=float, default=preprocess.DEFAULT_DRIFT_CUTOFF_S,
                    help="fMRI cosine drift cutoff period (s)")

    sp = add("split", cmd_split, "category-held-out train/valid/test split")
    sp.add_argument("--input", required=True)
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--valid-fraction", type=float, default=0.2)
    sp.add_argument("--matched", type=int, help="downsample training to this many unique images")
    sp.add_argument("--test-unique", type=int, help="keep this many test images")

    sp = add("train", cmd_train, "fit ridge or deep decoders")
    sp.add_argument("--input", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--model", choices=["ridge", "deep"], default="ridge")
    sp.add_argument("--config", help="JSON overrides for the brain-module configuration")
    sp.add_argument("--window", choices=["full", "sliding", "growing"], default="full")
    sp.add_argument("--width", type=float, help="window width (s) for sliding/growing")
    sp.add_argument("--start", type=float, help="growing-window start (s)")

    sp = add("eval", cmd_eval, "score trained decoders on the test split")
    sp.add_argument("--input", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--averaging", choices=list(SCOPES), default="single")
    sp.add_argument("--window", choices=["full", "sliding", "growing"])
    sp.add_argument("--head", choices=["mse", "clip"], default="mse")

    sp = add("scale-fit", cmd_scale_fit, "log-linear scaling fits, thresholds and costs",
             seed_required=False, out_required=False)
    sp.add_argument("--metrics", nargs="*", help="metrics CSV files (default: bundled synthetic metrics)")
    sp.add_argument("--x", choices=list(scaling.X_KINDS), default="trials")
    sp.add_argument("--averaging", choices=list(SCOPES), default="single")
    sp.add_argument("--threshold", type=float, help="target R for threshold inversion")
    sp.add_argument("--rates", help="JSON cost table {device: USD per hour}")

    sp = add("paramcount", cmd_paramcount, "per-layer parameter counts of a published configuration",
             seed_required=False, out_required=False)
    sp.add_argument("--device", choices=DEVICES, required=True)
    sp.add_argument("--size", choices=["medium", "large"], required=True)
    sp.add_argument("--labeling", choices=["architecture", "hyperparameters"], default="architecture")

    sp = add("report", cmd_report, "aggregate metrics into plot-ready CSV and figures", seed_required=False)
    sp.add_argument("--metrics", nargs="*", help="metrics CSV files (default: bundled synthetic metrics)")
    sp.add_argument("--averaging", choices=list(SCOPES), default="single")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args._started = time.time()
    _set_threads()
    try:
        args.func(args)
    except (ContractViolation, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (FileNotFoundError, KeyError) as e:
        print(f"error: missing input {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
