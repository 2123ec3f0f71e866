"""Desk-scale benchmark helpers shared by the CLI and the acceptance suite.

These glue the modules together: category-held-out splits, per-subject ridge
and multi-subject deep decoding, scoring with test-time averaging, and the
MetricRecord table format.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import linear, models, training
from .datasets import DATASETS, DeviceKind, SplitAssignment, TrialRecord, make_splits
from .errors import ContractViolation
from .evaluation import PredictionSet, average_predictions, pearson_featurewise, topk_accuracy
from .synthgen import SynthConfig, device_presets, generate, with_overrides

METRIC_HEADER = (
    "dataset", "device", "subjects", "n_train_trials", "window_start", "window_end",
    "averaging", "seed", "pearson_r", "top1", "top5",
)

# deep training settings used at desk scale (the full-size models are far too slow on CPU)
DESK_TRAIN = dict(lr=3e-3, batch_size=64, max_epochs=50, patience=10)


@dataclass
class MetricRecord:
    dataset: str
    device: str
    subjects: str
    n_train_trials: int
    window_start: float
    window_end: float
    averaging: str
    seed: int
    pearson_r: float
    top1: float
    top5: float


def write_metrics(records: Iterable[MetricRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for r in records:
            row = asdict(r)
            w.writerow([_fmt(row[k]) for k in METRIC_HEADER])


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 10))
    return v


def read_metrics(path: str | Path) -> list[MetricRecord]:
    types = {f.name: f.type for f in fields(MetricRecord)}
    casts = {"int": int, "float": float, "str": str}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_HEADER:
            raise ContractViolation(f"{path}: metrics header must be {','.join(METRIC_HEADER)}")
        for row in reader:
            out.append(MetricRecord(**{k: casts[types[k]](row[k]) for k in METRIC_HEADER}))
    return out


def bundled_metrics_path() -> Path:
    return Path(__file__).parent / "data" / "synthetic_metrics.csv"


# -- splits --------------------------------------------------------------------


def category_split(trials: Sequence[TrialRecord], seed: int, test_fraction: float = 0.2,
                   valid_fraction: float = 0.2) -> SplitAssignment:
    """Hold out a random ``test_fraction`` of categories, then split the rest."""
    cats = sorted({t.category_id for t in trials})
    n_test = max(1, int(math.floor(test_fraction * len(cats))))
    if n_test >= len(cats):
        raise ContractViolation("need at least two categories to hold some out")
    rng = np.random.default_rng(seed)
    held = sorted(cats[j] for j in rng.choice(len(cats), size=n_test, replace=False))
    return make_splits(trials, held, valid_fraction, seed)


# -- decoders ------------------------------------------------------------------


def _labels(trials, idx):
    idx = np.asarray(idx, dtype=np.int64)
    return (
        np.array([trials[i].subject_id for i in idx], dtype=np.int64),
        np.array([trials[i].image_id for i in idx], dtype=np.int64),
        np.array([trials[i].repetition_index for i in idx], dtype=np.int64),
    )


def ridge_fit_subjects(X, trials, embeddings, fit_idx, alpha_grid=linear.DECODING_ALPHAS) -> dict[int, linear.RidgeFit]:
    """One ridge decoder per subject on flattened (channel x time) features."""
    Xf = np.asarray(X, dtype=float).reshape(len(X), -1)
    subj, img, _ = _labels(trials, fit_idx)
    fit_idx = np.asarray(fit_idx, dtype=np.int64)
    fits = {}
    for s in np.unique(subj):
        rows = fit_idx[subj == s]
        fits[int(s)] = linear.ridge_fit(Xf[rows], embeddings[img[subj == s]], alpha_grid)
    return fits


def ridge_predict(fits: dict[int, linear.RidgeFit], X, trials, idx) -> PredictionSet:
    Xf = np.asarray(X, dtype=float).reshape(len(X), -1)
    idx = np.asarray(idx, dtype=np.int64)
    subj, img, rep = _labels(trials, idx)
    out = None
    for s in np.unique(subj):
        if int(s) not in fits:
            raise ContractViolation(f"no decoder trained for subject {int(s)}")
        mask = subj == s
        pred = fits[int(s)].predict(Xf[idx[mask]])
        if out is None:
            out = np.zeros((len(idx), pred.shape[1]))
        out[mask] = pred
    return PredictionSet(subj, img, rep, out, head="ridge")


def ridge_decode(X, trials, embeddings, split: SplitAssignment) -> PredictionSet:
    """Fit on train+valid, predict the test rows."""
    fits = ridge_fit_subjects(X, trials, embeddings, split.train + split.valid)
    return ridge_predict(fits, X, trials, split.test)


def desk_model_config(config: SynthConfig, timepoints: int | None = None, channels: int | None = None):
    """Small brain-module configuration that trains in seconds on one CPU."""
    t = config.timepoints if timepoints is None else timepoints
    c = config.channels if channels is None else channels
    if config.device.is_fmri:
        return models.FmriModuleConfig(
            hidden=32, n_blocks=1, clip_head=True, in_vertices=c, n_trs=t,
            embed_dim=config.embed_dim, n_subjects=config.n_subjects,
        )
    return models.MeegModuleConfig(
        c, t, hidden=32, n_blocks=1, backbone_out=64, embed_dim=config.embed_dim,
        n_subjects=config.n_subjects, sa_out=32, sa_harmonics=4,
    )


def deep_fit(X, trials, embeddings, split: SplitAssignment, model_config, positions=None, seed: int = 0,
             train_config: training.TrainConfig | None = None) -> training.TrainResult:
    subj = np.array([t.subject_id for t in trials], dtype=np.int64)
    img = np.array([t.image_id for t in trials], dtype=np.int64)
    model = models.build_model(model_config, positions, seed=seed)
    data = training.TrainData(np.asarray(X, dtype=np.float32), subj, embeddings[img], split.train, split.valid)
    cfg = train_config or training.TrainConfig(seed=seed, **DESK_TRAIN)
    result = training.train(model, data, cfg)
    return result


def deep_predict(model, X, trials, idx, head: str = "mse") -> PredictionSet:
    idx = np.asarray(idx, dtype=np.int64)
    subj, img, rep = _labels(trials, idx)
    mse, clip = training.predict(model, np.asarray(X, dtype=np.float32)[idx], subj)
    return PredictionSet(subj, img, rep, mse if head == "mse" else clip, head=head)


def deep_decode(X, trials, embeddings, split, model_config, positions=None, seed: int = 0) -> PredictionSet:
    result = deep_fit(X, trials, embeddings, split, model_config, positions, seed)
    return deep_predict(result.model, X, trials, split.test)


# -- scoring -------------------------------------------------------------------


def score(preds: PredictionSet, embeddings: np.ndarray, scope: str = "single_trial", pooled: bool = True) -> dict:
    """Pearson R (mean over embedding dimensions) and top-1/top-5 retrieval.

    Retrieval candidates are the unique test images. By default R is computed
    on all test rows pooled; ``pooled=False`` averages R computed separately
    per repetition index (single-trial scope only). The MSE head predicts
    z-scored targets, and Pearson R is invariant to that per-dimension affine map.
    """
    avg = average_predictions(preds, scope)
    targets = embeddings[avg.image_ids]
    if pooled or scope not in ("single", "single_trial"):
        r = pearson_featurewise(avg.vectors, targets)
    else:
        r = float(np.mean([
            pearson_featurewise(avg.vectors[avg.repetition_index == k], targets[avg.repetition_index == k])
            for k in np.unique(avg.repetition_index)
        ]))
    cand_ids = np.unique(avg.image_ids)
    cands = embeddings[cand_ids]
    k5 = min(5, len(cand_ids))
    return {
        "pearson_r": r,
        "top1": topk_accuracy(avg.vectors, avg.image_ids, cands, cand_ids, 1),
        "top5": topk_accuracy(avg.vectors, avg.image_ids, cands, cand_ids, k5),
        "n_rows": len(avg),
    }


def first_k_reps(preds: PredictionSet, k: int) -> PredictionSet:
    """Rows whose repetition index lies in the first ``k`` presentations of their (subject, image)."""
    keep = np.zeros(len(preds), dtype=bool)
    order = np.lexsort((preds.repetition_index, preds.image_ids, preds.subject_ids))
    seen: dict[tuple[int, int], int] = {}
    for i in order:
        key = (int(preds.subject_ids[i]), int(preds.image_ids[i]))
        seen[key] = seen.get(key, 0) + 1
        keep[i] = seen[key] <= k
    return PredictionSet(
        preds.subject_ids[keep], preds.image_ids[keep], preds.repetition_index[keep],
        preds.vectors[keep], preds.head,
    )


def averaging_curve(preds: PredictionSet, embeddings, ks: Sequence[int] = (1, 2, 4, 8),
                    scope: str = "subject_average") -> list[tuple[int, float]]:
    """(k, R) after averaging the first ``k`` repetitions of each test image."""
    max_reps = np.bincount(
        np.unique(np.stack([preds.subject_ids, preds.image_ids], 1), axis=0, return_inverse=True)[1].ravel()
    ).min()
    if max(ks) > max_reps:
        raise ContractViolation(f"k={max(ks)} exceeds the {max_reps} repetitions available per image")
    return [(k, score(first_k_reps(preds, k), embeddings, scope)["pearson_r"]) for k in ks]


def record(dataset: str, config: SynthConfig, n_train: int, window, scope: str, seed: int, scores: dict) -> MetricRecord:
    return MetricRecord(
        dataset=dataset, device=config.device.value, subjects=f"0-{config.n_subjects - 1}",
        n_train_trials=int(n_train), window_start=float(window[0]), window_end=float(window[1]),
        averaging=scope, seed=int(seed), pearson_r=float(scores["pearson_r"]),
        top1=float(scores["top1"]), top5=float(scores["top5"]),
    )


def soa_for(dataset: str, device: str) -> float:
    """SOA of a catalogued dataset, or of the synthetic preset for ``device``."""
    if dataset in DATASETS:
        return DATASETS[dataset].soa_seconds
    return device_presets()[DeviceKind(device)].soa_seconds


# -- scaling sweep -------------------------------------------------------------


def scaling_sweep(device: DeviceKind, seeds: Sequence[int] = (0, 1, 2),
                  fractions: Sequence[float] = (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0),
                  scopes: Sequence[str] = ("single_trial", "subject_average"), **overrides) -> list[MetricRecord]:
    """Ridge decoding on growing training subsets of a synthetic preset."""
    out = []
    for seed in seeds:
        cfg = with_overrides(device_presets()[DeviceKind(device)], seed=seed, **overrides)
        ds = generate(cfg)
        split = category_split(ds.trials, seed)
        pool = np.array(split.train + split.valid)
        order = np.random.default_rng(seed).permutation(len(pool))
        for frac in fractions:
            n = max(4 * cfg.n_subjects, int(round(frac * len(pool))))
            sub = SplitAssignment(train=sorted(pool[order[:n]].tolist()), valid=[], test=split.test)
            preds = ridge_decode(ds.X, ds.trials, ds.embeddings, sub)
            for scope in scopes:
                out.append(record(f"synthetic-{cfg.device.value}", cfg, n, cfg.window, scope, seed,
                                  score(preds, ds.embeddings, scope)))
    return out


AGG_HEADER = (
    "dataset", "device", "n_train_trials", "window_start", "window_end", "averaging",
    "n_seeds", "pearson_r_mean", "pearson_r_sem", "top1_mean", "top5_mean",
)


def aggregate_metrics(records: Sequence[MetricRecord]) -> list[dict]:
    """Mean and SEM across seeds for every (dataset, size, window, averaging) cell."""
    groups: dict[tuple, list[MetricRecord]] = {}
    for r in records:
        key = (r.dataset, r.device, r.n_train_trials, r.window_start, r.window_end, r.averaging)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        rs = groups[key]
        r_vals = np.array([x.pearson_r for x in rs])
        sem = float(r_vals.std(ddof=1) / np.sqrt(len(rs))) if len(rs) > 1 else 0.0
        rows.append(dict(
            zip(AGG_HEADER[:6], key), n_seeds=len(rs), pearson_r_mean=float(r_vals.mean()),
            pearson_r_sem=sem, top1_mean=float(np.mean([x.top1 for x in rs])),
            top5_mean=float(np.mean([x.top5 for x in rs])),
        ))
    return rows


def write_aggregate(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGG_HEADER, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in AGG_HEADER})
