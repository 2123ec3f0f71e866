"""Ridge regression with alpha selection, stepwise decoding and encoding.

Leave-one-out errors for every alpha come from one SVD of the centred
design matrix (generalised cross-validation identity), so a full grid costs
about as much as a single fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .evaluation import pearson_featurewise, pearson_per_column

DECODING_ALPHAS = np.logspace(-4, 8, 33)
ENCODING_ALPHAS = np.logspace(-12, 22, 35)


@dataclass
class RidgeFit:
    weights: np.ndarray  # (q, p)
    intercept: np.ndarray  # (q,)
    alpha_selected: float | np.ndarray
    alpha_grid: np.ndarray
    cv_errors: np.ndarray = field(repr=False, default=None)  # (n_alphas,) or (n_alphas, q)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights.T + self.intercept


def _svd_solve(s, Vt, UtY, alpha):
    d = s / (s**2 + alpha)
    return Vt.T @ (d[:, None] * UtY)


def _loo_errors(U, s, UtY, Yc, alphas, n):
    """Mean squared leave-one-out residuals per alpha and target: (n_alphas, q)."""
    out = np.empty((len(alphas), Yc.shape[1]))
    U2 = U**2
    for j, alpha in enumerate(alphas):
        shrink = s**2 / (s**2 + alpha)
        fitted = U @ (shrink[:, None] * UtY)
        # centring contributes 1/n to every leverage
        h = U2 @ shrink + 1.0 / n
        denom = 1.0 - h
        if np.any(np.abs(denom) < 1e-10):
            # interpolating fit: leave-one-out error undefined, never select
            out[j] = np.inf
            continue
        resid = (Yc - fitted) / denom[:, None]
        out[j] = np.mean(resid**2, axis=0)
    return out


def _kfold_errors(X, Y, alphas, k, seed=0):
    n = X.shape[0]
    folds = np.array_split(np.random.default_rng(seed).permutation(n), k)
    err = np.zeros((len(alphas), Y.shape[1]))
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        xm, ym = X[train].mean(0), Y[train].mean(0)
        U, s, Vt = np.linalg.svd(X[train] - xm, full_matrices=False)
        UtY = U.T @ (Y[train] - ym)
        for j, alpha in enumerate(alphas):
            W = _svd_solve(s, Vt, UtY, alpha)
            pred = (X[test] - xm) @ W + ym
            err[j] += np.sum((Y[test] - pred) ** 2, axis=0)
    return err / n


def ridge_fit(
    X: np.ndarray,
    Y: np.ndarray,
    alpha_grid: Sequence[float] = DECODING_ALPHAS,
    cv: str | int = "gcv",
    alpha_per_target: bool = False,
) -> RidgeFit:
    """Fit ``min ||Y - XW - b||^2 + alpha ||W||^2`` with alpha chosen on ``alpha_grid``.

    Parameters
    ----------
    X : (n, p) array
    Y : (n, q) or (n,) array
    alpha_grid : positive alphas to try
    cv : ``"gcv"`` for efficient leave-one-out, or an int k for seeded k-fold
    alpha_per_target : select a separate alpha for each column of Y
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    alphas = np.asarray(alpha_grid, dtype=float).ravel()
    n = X.shape[0]
    if n < 2 or Y.shape[0] != n:
        raise ContractViolation("ridge_fit needs n >= 2 rows in both X and Y")
    if alphas.size == 0 or np.any(alphas <= 0):
        raise ContractViolation("alpha grid must be nonempty and positive")

    xm, ym = X.mean(0), Y.mean(0)
    Xc, Yc = X - xm, Y - ym
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    UtY = U.T @ Yc

    if alphas.size == 1:
        errors = np.zeros((1, Y.shape[1]))
    elif cv == "gcv":
        errors = _loo_errors(U, s, UtY, Yc, alphas, n)
    else:
        errors = _kfold_errors(X, Y, alphas, int(cv))

    if alpha_per_target:
        best = np.argmin(errors, axis=0)
        W = np.empty((X.shape[1], Y.shape[1]))
        for j in np.unique(best):
            cols = best == j
            W[:, cols] = _svd_solve(s, Vt, UtY[:, cols], alphas[j])
        selected = alphas[best]
        cv_errors = errors
    else:
        mean_err = errors.mean(axis=1)
        best = int(np.argmin(mean_err))
        W = _svd_solve(s, Vt, UtY, alphas[best])
        selected = float(alphas[best])
        cv_errors = mean_err
    intercept = ym - xm @ W
    return RidgeFit(weights=W.T, intercept=intercept, alpha_selected=selected, alpha_grid=alphas, cv_errors=cv_errors)


def stepwise_decode(
    data: np.ndarray,
    targets: np.ndarray,
    train_idx: Sequence[int],
    test_idx: Sequence[int],
    alpha_grid: Sequence[float] = DECODING_ALPHAS,
) -> np.ndarray:
    """One ridge decoder per timepoint; returns feature-wise Pearson R on the test rows.

    ``data`` is (n_trials, channels, timepoints) for one subject and
    ``targets`` the (n_trials, F) embeddings.
    """
    data = np.asarray(data, dtype=float)
    train_idx, test_idx = np.asarray(train_idx), np.asarray(test_idx)
    r = np.empty(data.shape[2])
    for t in range(data.shape[2]):
        fit = ridge_fit(data[train_idx, :, t], targets[train_idx], alpha_grid)
        r[t] = pearson_featurewise(fit.predict(data[test_idx, :, t]), targets[test_idx])
    return r


def _lagged(Z, lags):
    if not lags:
        return Z
    blocks = []
    for lag in lags:
        shifted = np.zeros_like(Z)
        if lag > 0:
            shifted[lag:] = Z[:-lag]
        elif lag < 0:
            shifted[:lag] = Z[-lag:]
        else:
            shifted = Z
        blocks.append(shifted)
    return np.concatenate(blocks, axis=1)


def encode(
    Z: np.ndarray,
    responses: np.ndarray,
    alpha_grid: Sequence[float] = ENCODING_ALPHAS,
    folds: int = 2,
    seed: int = 0,
    lags: Sequence[int] | None = None,
) -> np.ndarray:
    """Cross-validated encoding score per channel.

    ``Z`` holds the image features of each trial (n, F), ``responses`` the
    response of each channel at a fixed latency (n, C). Every channel gets its
    own alpha. Predictions from all folds are pooled before correlating.
    ``lags`` optionally concatenates row-shifted copies of ``Z`` (rows must
    then be in presentation order).
    """
    Z = _lagged(np.asarray(Z, dtype=float), lags)
    responses = np.asarray(responses, dtype=float)
    if responses.ndim == 1:
        responses = responses[:, None]
    n = Z.shape[0]
    pred = np.zeros_like(responses)
    for test in np.array_split(np.random.default_rng(seed).permutation(n), folds):
        train = np.setdiff1d(np.arange(n), test)
        fit = ridge_fit(Z[train], responses[train], alpha_grid, alpha_per_target=True)
        pred[test] = fit.predict(Z[test])
    flat = responses.std(axis=0) == 0
    if flat.any():
        warnings.warn(f"constant channels {np.flatnonzero(flat).tolist()} scored as R=0", RuntimeWarning, stacklevel=2)
    return pearson_per_column(pred, responses, warn=False)
