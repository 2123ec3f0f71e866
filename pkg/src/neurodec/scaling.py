"""Log-linear scaling fits, threshold inversion and acquisition cost model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ContractViolation

# USD per recording hour, averaged over surveyed providers.
HOURLY_COST_USD: dict[str, float] = {
    "eeg": 263.0,
    "meg": 550.0,
    "fmri3t": 935.0,
    "fmri7t": 1093.0,
}

X_KINDS = ("trials", "hours", "usd")


def load_cost_table(path: str | Path | None = None) -> dict[str, float]:
    """Read an editable ``{device: usd_per_hour}`` JSON table, or the defaults."""
    if path is None:
        return dict(HOURLY_COST_USD)
    table = {str(k).lower(): float(v) for k, v in json.loads(Path(path).read_text()).items()}
    if any(v <= 0 for v in table.values()):
        raise ContractViolation("hourly rates must be positive")
    return table


def recording_time(n_trials: float, soa_seconds: float) -> float:
    """Hours of recording implied by ``n_trials`` presentations at a given SOA."""
    if n_trials < 0 or soa_seconds < 0:
        raise ContractViolation("n_trials and soa_seconds must be >= 0")
    return n_trials * soa_seconds / 3600.0


def estimate_cost(n_trials: float, soa_seconds: float, hourly_rate: float) -> float:
    if hourly_rate < 0:
        raise ContractViolation("hourly_rate must be >= 0")
    return recording_time(n_trials, soa_seconds) * hourly_rate


def dataset_cost(name: str, matched: bool = False, rates: dict[str, float] | None = None) -> float:
    """Retrospective acquisition cost of one of the catalogued datasets (train+valid trials)."""
    from .datasets import DATASETS

    spec = DATASETS[name]
    n = spec.matched_train_valid_trials if matched else spec.train_valid_trials
    rate = (rates or HOURLY_COST_USD)[spec.device.value]
    return estimate_cost(n, spec.soa_seconds, rate)


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    sem_slope: float
    sem_intercept: float
    x_kind: str = "trials"
    n_points: int = 0
    device: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("device", "x_kind", "slope", "intercept", "sem_slope", "sem_intercept", "n_points")}


def fit_loglinear(points: Sequence[tuple[float, float]], x_kind: str = "trials", device: str = "") -> ScalingFit:
    """Least-squares fit of ``R = slope * log10(x) + intercept``.

    Standard errors come from the residual variance with ``n - 2`` degrees
    of freedom.
    """
    pts = np.asarray(sorted(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractViolation("points must be (x, R) pairs")
    x, r = pts[:, 0], pts[:, 1]
    if np.any(x <= 0):
        raise ContractViolation("x must be > 0 for a log-linear fit")
    if len(np.unique(x)) < 3:
        raise ContractViolation("need at least 3 distinct x values")
    lx = np.log10(x)
    n = len(lx)
    mx = lx.mean()
    sxx = np.sum((lx - mx) ** 2)
    slope = np.sum((lx - mx) * (r - r.mean())) / sxx
    intercept = r.mean() - slope * mx
    resid = r - (slope * lx + intercept)
    s2 = np.sum(resid**2) / (n - 2) if n > 2 else 0.0
    sem_slope = float(np.sqrt(s2 / sxx))
    sem_intercept = float(np.sqrt(s2 * (1.0 / n + mx**2 / sxx)))
    return ScalingFit(float(slope), float(intercept), sem_slope, sem_intercept, x_kind, n, device)


def predict_at(fit: ScalingFit, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ContractViolation("x must be > 0")
    out = fit.slope * np.log10(x) + fit.intercept
    return float(out) if out.ndim == 0 else out


def solve_threshold(fit: ScalingFit, r_star: float) -> float:
    """Data quantity at which the fitted curve reaches ``r_star``."""
    if fit.slope == 0 or (fit.slope < 0 and r_star > fit.intercept):
        raise ContractViolation(
            f"threshold R={r_star} unreachable with slope {fit.slope:g}, intercept {fit.intercept:g}"
        )
    try:
        return float(10.0 ** ((r_star - fit.intercept) / fit.slope))
    except OverflowError:
        raise ContractViolation(f"threshold R={r_star} lies beyond the representable data range") from None


def detect_plateau(points: Sequence[tuple[float, float]], alpha: float = 0.05) -> bool:
    """Flag a plateau when the upper half of the curve has no significant positive slope.

    The points are sorted by x; a log-linear fit on the upper half (at least
    three points) is tested one-sided against zero slope.
    """
    pts = sorted(points)
    upper = pts[len(pts) // 2 :]
    if len(pts) < 6:
        raise ContractViolation("need at least 6 points to test for a plateau")
    fit = fit_loglinear(upper)
    if fit.sem_slope == 0.0:
        return fit.slope <= 0.0
    t = fit.slope / fit.sem_slope
    p = stats.t.sf(t, df=len(upper) - 2)
    return bool(p >= alpha)
