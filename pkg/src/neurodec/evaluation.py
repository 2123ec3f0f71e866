"""Decoding metrics, test-time averaging, retrieval and reconstruction scores."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractViolation

SCOPES = ("single_trial", "subject_average", "instance_average")


def pearson_per_column(pred: np.ndarray, target: np.ndarray, warn: bool = True) -> np.ndarray:
    """Pearson correlation of each column pair; zero-variance columns give 0."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    pc = pred - pred.mean(0)
    tc = target - target.mean(0)
    denom = np.sqrt(np.sum(pc**2, 0) * np.sum(tc**2, 0))
    flat = denom == 0
    if flat.any() and warn:
        warnings.warn(f"{int(flat.sum())} zero-variance features counted as R=0", RuntimeWarning, stacklevel=2)
    r = np.zeros(pred.shape[1])
    r[~flat] = np.sum(pc * tc, 0)[~flat] / denom[~flat]
    return r


def pearson_featurewise(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over features of the correlation across rows."""
    pred = np.asarray(pred)
    if pred.shape[0] < 3:
        raise ContractViolation("feature-wise Pearson R needs at least 3 rows")
    return float(np.mean(pearson_per_column(pred, target)))


@dataclass
class PredictionSet:
    """Predicted embeddings with their trial labels.

    ``n_averaged`` counts how many single-trial predictions each row pools.
    """

    subject_ids: np.ndarray
    image_ids: np.ndarray
    repetition_index: np.ndarray
    vectors: np.ndarray
    head: str = "mse"
    n_averaged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        self.image_ids = np.asarray(self.image_ids, dtype=np.int64)
        self.repetition_index = np.asarray(self.repetition_index, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.n_averaged is None:
            self.n_averaged = np.ones(len(self.image_ids), dtype=np.int64)
        n = len(self.image_ids)
        if not (len(self.subject_ids) == len(self.repetition_index) == self.vectors.shape[0] == n):
            raise ContractViolation("PredictionSet needs one vector per trial")

    def __len__(self):
        return len(self.image_ids)


def average_predictions(preds: PredictionSet, scope: str = "single_trial") -> PredictionSet:
    """Average predictions per (subject, image) or per image.

    Output rows are sorted by key, which makes the result independent of
    input row order.
    """
    if scope in ("single", "single_trial"):
        return preds
    if scope in ("subject", "subject_average"):
        keys = np.stack([preds.subject_ids, preds.image_ids], axis=1)
    elif scope in ("instance", "instance_average"):
        keys = preds.image_ids[:, None]
    else:
        raise ContractViolation(f"unknown averaging scope {scope!r}")
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    counts = np.bincount(inverse, minlength=len(uniq))
    sums = np.zeros((len(uniq), preds.vectors.shape[1]))
    # sort before accumulating so float sums do not depend on row order
    order = np.lexsort((preds.repetition_index, preds.subject_ids, inverse))
    np.add.at(sums, inverse[order], preds.vectors[order])
    vectors = sums / counts[:, None]
    if uniq.shape[1] == 2:
        subjects, images = uniq[:, 0], uniq[:, 1]
    else:
        subjects, images = np.full(len(uniq), -1), uniq[:, 0]
    return PredictionSet(subjects, images, np.zeros(len(uniq), dtype=np.int64), vectors, preds.head, counts)


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ContractViolation(f"zero-norm {what} vector; cosine similarity undefined")
    return x / norms


def retrieve_topk(
    pred: np.ndarray,
    candidates: np.ndarray,
    k: int,
    candidate_ids: Sequence[int] | None = None,
) -> np.ndarray:
    """Ids of the ``k`` candidates most cosine-similar to ``pred``; ties go to lower id."""
    candidates = np.asarray(candidates, dtype=float)
    ids = np.arange(len(candidates)) if candidate_ids is None else np.asarray(candidate_ids)
    if k > len(candidates):
        raise ContractViolation("k exceeds the candidate pool")
    sims = _unit_rows(candidates, "candidate") @ _unit_rows(np.asarray(pred, dtype=float), "prediction")
    order = np.lexsort((ids, -sims))
    return ids[order[:k]]


def topk_accuracy(
    preds: np.ndarray,
    true_ids: Sequence[int],
    candidates: np.ndarray,
    candidate_ids: Sequence[int],
    k: int = 5,
) -> float:
    """Fraction of predictions whose true image is among the top ``k`` retrievals."""
    hits = [
        tid in retrieve_topk(p, candidates, k, candidate_ids)
        for p, tid in zip(np.asarray(preds), true_ids)
    ]
    return float(np.mean(hits)) if hits else float("nan")


def renormalize_predictions(pred: np.ndarray, train_mean: np.ndarray, train_std: np.ndarray) -> np.ndarray:
    """Z-score predictions over the set, then map back with training-set statistics."""
    pred = np.asarray(pred, dtype=float)
    mu, sd = pred.mean(0), pred.std(0)
    flat = sd == 0
    if flat.any():
        warnings.warn(f"{int(flat.sum())} constant predicted features passed through", RuntimeWarning, stacklevel=2)
    out = pred.copy()
    ok = ~flat
    out[:, ok] = (pred[:, ok] - mu[ok]) / sd[ok] * np.asarray(train_std)[ok] + np.asarray(train_mean)[ok]
    return out


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def reconstruction_metrics(
    pairs: Sequence[tuple[int, int]],
    provider: Mapping[int, np.ndarray],
    mode: str = "pointwise",
) -> float:
    """Score reconstructions under a representation ``provider`` (id -> vector).

    ``pointwise``: mean correlation between each image and its reconstruction
    (PixCorr when the provider returns raw pixels).
    ``two_way``: fraction of (pair, distractor) comparisons where the
    reconstruction correlates more with its own image than with another
    image from ``pairs``.
    """
    dims = {np.asarray(provider[i]).size for pair in pairs for i in pair}
    if len(dims) > 1:
        raise ContractViolation(f"provider vectors have mixed dimensions {sorted(dims)}")
    vec = {i: np.asarray(provider[i], dtype=float).ravel() for pair in pairs for i in pair}
    if mode == "pointwise":
        return float(np.mean([_corr(vec[i], vec[r]) for i, r in pairs]))
    if mode == "two_way":
        images = [i for i, _ in pairs]
        wins = []
        for i, r in pairs:
            own = _corr(vec[i], vec[r])
            wins += [own > _corr(vec[j], vec[r]) for j in images if j != i]
        return float(np.mean(wins))
    raise ContractViolation(f"unknown reconstruction metric mode {mode!r}")
