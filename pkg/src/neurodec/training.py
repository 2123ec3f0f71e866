"""Losses, early-stopped Adam training and random hyperparameter search."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractViolation, TrainingDiverged
from .evaluation import pearson_featurewise

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "valid_loss", "valid_R")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.25
    tau: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ContractViolation("lambda must lie in [0, 1]")
        if self.tau <= 0:
            raise ContractViolation("temperature must be > 0")


def clip_loss(pred: torch.Tensor, target: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """Brain-to-image contrastive loss over in-batch candidates, cosine similarity / tau."""
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[0] < 1:
        raise ContractViolation("clip_loss expects two (B, F) tensors with B >= 1")
    pn, tn = pred.norm(dim=1, keepdim=True), target.norm(dim=1, keepdim=True)
    if bool((pn == 0).any()) or bool((tn == 0).any()):
        raise ContractViolation("zero-norm row in clip_loss; cosine similarity undefined")
    logits = (pred / pn) @ (target / tn).T / tau
    labels = torch.arange(pred.shape[0], device=pred.device)
    return F.cross_entropy(logits, labels)


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ContractViolation(f"mse_loss shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((target - pred) ** 2)


def combined_loss(clip, mse, lam: float = 0.25):
    return lam * clip + (1.0 - lam) * mse


def model_loss(mse_out, clip_out, target_z, target_raw, loss: LossConfig = LossConfig()):
    """Combined objective: CLIP head vs raw embeddings, MSE head vs z-scored embeddings."""
    return combined_loss(clip_loss(clip_out, target_raw, loss.tau), mse_loss(mse_out, target_z), loss.lam)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    valid_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 0.25
    tau: float = 1.0
    monitor: str = "loss"

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ContractViolation("patience must not exceed max_epochs")
        if self.monitor not in ("loss", "pearson"):
            raise ContractViolation("monitor must be 'loss' or 'pearson'")


@dataclass
class TrainData:
    """Epochs, subject routing and targets, with train/valid row indices."""

    X: np.ndarray  # (n, channels, time)
    subject_ids: np.ndarray
    targets: np.ndarray  # raw embeddings, (n, F)
    train_idx: np.ndarray
    valid_idx: np.ndarray
    target_mean: np.ndarray = field(default=None)
    target_std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.valid_idx = np.asarray(self.valid_idx, dtype=np.int64)
        if len(self.train_idx) == 0 or len(self.valid_idx) == 0:
            raise ContractViolation("training needs nonempty train and valid splits")
        if self.target_mean is None:
            fit = self.targets[self.train_idx]
            self.target_mean = fit.mean(0)
            self.target_std = np.where(fit.std(0) > 0, fit.std(0), 1.0)

    def zscored(self, idx) -> np.ndarray:
        return (self.targets[idx] - self.target_mean) / self.target_std


class EarlyStopping:
    """Tracks the best epoch; ``step`` returns True once patience is exhausted."""

    def __init__(self, patience: int, mode: str = "min"):
        self.patience = patience
        self.sign = 1.0 if mode == "min" else -1.0
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, value: float) -> bool:
        if self.sign * value < self.best:
            self.best = self.sign * value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


def _dtype(model):
    return next(model.parameters()).dtype


@torch.no_grad()
def predict(model: nn.Module, X: np.ndarray, subject_ids: np.ndarray, batch_size: int = 256):
    """Eval-mode predictions of both heads as numpy arrays."""
    was_training = model.training
    model.eval()
    dt = _dtype(model)
    mse_parts, clip_parts = [], []
    for a in range(0, len(X), batch_size):
        x = torch.as_tensor(X[a : a + batch_size], dtype=dt)
        s = torch.as_tensor(subject_ids[a : a + batch_size], dtype=torch.long)
        m, c = model(x, s)
        mse_parts.append(m.numpy())
        clip_parts.append(c.numpy())
    model.train(was_training)
    return np.concatenate(mse_parts), np.concatenate(clip_parts)


@torch.no_grad()
def _evaluate(model, data: TrainData, idx, loss_cfg: LossConfig):
    mse_out, clip_out = predict(model, data.X[idx], data.subject_ids[idx])
    tz = torch.as_tensor(data.zscored(idx))
    tr = torch.as_tensor(data.targets[idx])
    loss = float(model_loss(torch.as_tensor(mse_out, dtype=tz.dtype), torch.as_tensor(clip_out, dtype=tz.dtype), tz, tr, loss_cfg))
    r = pearson_featurewise(mse_out, data.zscored(idx)) if len(idx) >= 3 else float("nan")
    return loss, r


def adam_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)


@dataclass
class TrainResult:
    model: nn.Module
    history: list[dict]
    best_epoch: int
    best_state: dict


def train(model: nn.Module, data: TrainData, config: TrainConfig) -> TrainResult:
    """Adam with early stopping; the returned model holds the best-validation parameters.

    Batches come from a seeded shuffle each epoch (last partial batch kept);
    dropout draws from the torch generator seeded with ``config.seed``.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    loss_cfg = LossConfig(config.lam, config.tau)
    opt = adam_optimizer(model.parameters(), config)
    stopper = EarlyStopping(config.patience, "min" if config.monitor == "loss" else "max")
    dt = _dtype(model)
    X = torch.as_tensor(data.X, dtype=dt)
    subj = torch.as_tensor(data.subject_ids, dtype=torch.long)
    tz_all = torch.as_tensor((data.targets - data.target_mean) / data.target_std, dtype=dt)
    tr_all = torch.as_tensor(data.targets, dtype=dt)

    history: list[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = data.train_idx[rng.permutation(len(data.train_idx))]
        total, count = 0.0, 0
        for b, a in enumerate(range(0, len(order), config.batch_size)):
            idx = torch.as_tensor(order[a : a + config.batch_size])
            mse_out, clip_out = model(X[idx], subj[idx])
            loss = model_loss(mse_out, clip_out, tz_all[idx], tr_all[idx], loss_cfg)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b} (lr={opt.param_groups[0]['lr']:g})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)

        valid_loss, valid_r = _evaluate(model, data, data.valid_idx, loss_cfg)
        history.append(dict(epoch=epoch, train_loss=total / count, valid_loss=valid_loss, valid_R=valid_r))
        monitored = valid_loss if config.monitor == "loss" else valid_r
        stop = stopper.step(epoch, monitored)
        if stopper.improved:
            best_state = copy.deepcopy(model.state_dict())
        log.debug("epoch %d train %.4f valid %.4f R %.4f", epoch, total / count, valid_loss, valid_r)
        if stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, stopper.best_epoch, best_state)


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_HEADER})


# -- hyperparameter search ---------------------------------------------------


@dataclass(frozen=True)
class Choice:
    values: tuple

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]

    def contains(self, v) -> bool:
        return v in self.values


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float
    integer: bool = True

    def sample(self, rng: np.random.Generator):
        v = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        return int(min(self.high, max(self.low, round(v)))) if self.integer else v

    def contains(self, v) -> bool:
        return self.low <= v <= self.high


@dataclass
class SearchSpace:
    params: dict
    n_samples: int = 75

    def sample(self, rng: np.random.Generator) -> dict:
        return {name: dist.sample(rng) for name, dist in self.params.items()}

    def contains(self, config: dict) -> bool:
        return all(self.params[k].contains(v) for k, v in config.items())


COMMON_SPACE = {
    "batch_size": Choice((32, 64, 128, 256, 512)),
    "lr": Choice((3e-5, 3e-4, 3e-3)),
}


def meeg_search_space(n_samples: int = 75) -> SearchSpace:
    return SearchSpace(
        {
            **COMMON_SPACE,
            "n_blocks": Choice((0, 1, 2, 3, 4, 5)),
            "hidden": LogUniform(32, 512),
            "backbone_out": LogUniform(64, 2048),
        },
        n_samples,
    )


def fmri_search_space(n_samples: int = 75) -> SearchSpace:
    return SearchSpace(
        {
            **COMMON_SPACE,
            "hidden": LogUniform(32, 2048),
            "n_blocks": Choice((0, 1, 2, 3)),
            "clip_head": Choice((False, True)),
        },
        n_samples,
    )


@dataclass
class SearchResult:
    best: dict
    best_score: float
    trials: list[tuple[dict, float]]


def hyperparameter_search(
    space: SearchSpace,
    objective: Callable[[dict], float],
    n_samples: int | None = None,
    seed: int = 0,
) -> SearchResult:
    """Random search maximising ``objective`` (an inner-test Pearson R).

    The caller builds the inner split, typically with
    :func:`neurodec.datasets.inner_category_split`.
    """
    rng = np.random.default_rng(seed)
    n = space.n_samples if n_samples is None else n_samples
    trials = []
    for _ in range(n):
        cfg = space.sample(rng)
        trials.append((cfg, float(objective(cfg))))
    scores = np.array([s for _, s in trials])
    best = int(np.nanargmax(scores))
    return SearchResult(trials[best][0], float(scores[best]), trials)
