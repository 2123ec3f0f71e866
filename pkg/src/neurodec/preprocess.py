"""M/EEG and fMRI preprocessing, epoching and decoding windows.

M/EEG: causal high-pass, polyphase resampling, per-channel robust scaling
with clipping, epoching with baseline correction.
fMRI: cosine-drift detrending and z-scoring of vertex time series, then
epoching in TRs.

The robust scaler uses linear interpolation between order statistics
(``numpy.percentile`` default).
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import ContractViolation

log = logging.getLogger(__name__)

CLIP_VALUE = 20.0
DEFAULT_DRIFT_CUTOFF_S = 128.0


@dataclass
class PreprocessReport:
    filter: dict = field(default_factory=dict)
    dropped: list[dict] = field(default_factory=list)
    zero_iqr_channels: list[int] = field(default_factory=list)
    zero_variance_vertices: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "filter": self.filter,
                "dropped_trials": self.dropped,
                "zero_iqr_channels": self.zero_iqr_channels,
                "zero_variance_vertices": self.zero_variance_vertices,
            },
            indent=1,
            sort_keys=True,
        )


@dataclass
class ContinuousRecording:
    """Channels x samples signal with stimulus events.

    ``onsets`` are sample indices (strictly increasing), ``image_ids`` the
    image shown at each onset.
    """

    data: np.ndarray
    sampling_rate: float
    onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    image_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    channel_positions: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.onsets = np.asarray(self.onsets, dtype=np.int64)
        self.image_ids = np.asarray(self.image_ids, dtype=np.int64)
        if self.data.ndim != 2:
            raise ContractViolation("recording data must be channels x samples")
        if len(self.onsets) != len(self.image_ids):
            raise ContractViolation("one image_id per onset required")
        if len(self.onsets) > 1 and np.any(np.diff(self.onsets) <= 0):
            raise ContractViolation("event onsets must be strictly increasing")


@dataclass
class EpochSet:
    """Trials x channels x time tensor cut around stimulus onsets.

    ``rate`` is samples per second (``1 / TR`` for fMRI). ``trial_ids`` index
    the event each epoch came from, which survives trial drops.
    """

    data: np.ndarray
    window: tuple[float, float]
    rate: float
    trial_ids: np.ndarray
    label: str = "full"

    @property
    def n_times(self) -> int:
        return self.data.shape[-1]


def highpass_downsample(
    rec: ContinuousRecording,
    cutoff: float = 0.1,
    target_rate: float = 120.0,
    report: PreprocessReport | None = None,
) -> ContinuousRecording:
    """Causal 2nd-order Butterworth high-pass, then polyphase resampling.

    The filter state is initialised to steady state for the first sample, so
    a constant signal maps to zero without a start-up transient. Resampling
    uses ``scipy.signal.resample_poly`` (linear-phase Kaiser FIR anti-alias).
    """
    sr = float(rec.sampling_rate)
    if cutoff <= 0 or cutoff >= target_rate / 2 or cutoff >= sr / 2:
        raise ContractViolation(f"cutoff {cutoff} Hz must lie below the Nyquist frequency")
    if target_rate > sr:
        raise ContractViolation("target_rate must not exceed the input sampling rate")

    b, a = signal.butter(2, cutoff, btype="highpass", fs=sr)
    zi = signal.lfilter_zi(b, a)[None, :] * rec.data[:, :1]
    filtered, _ = signal.lfilter(b, a, rec.data, axis=1, zi=zi)

    ratio = (Fraction(target_rate).limit_denominator(10_000) / Fraction(sr).limit_denominator(10_000)).limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    out = filtered if up == down else signal.resample_poly(filtered, up, down, axis=1)
    onsets = np.round(rec.onsets * up / down).astype(np.int64)
    if report is not None:
        report.filter.update(
            highpass_hz=cutoff, highpass_order=2, highpass="butterworth-causal",
            input_rate=sr, output_rate=float(target_rate), resample_up=up, resample_down=down,
        )
    return replace(rec, data=out, sampling_rate=float(target_rate), onsets=onsets)


def robust_scale_clip(
    rec: ContinuousRecording,
    clip: float = CLIP_VALUE,
    report: PreprocessReport | None = None,
) -> ContinuousRecording:
    """Per channel: subtract the median, divide by the IQR, clamp to ``[-clip, clip]``."""
    x = rec.data
    if x.shape[1] < 4:
        raise ContractViolation("robust scaling needs at least 4 samples per channel")
    q25, med, q75 = np.percentile(x, [25, 50, 75], axis=1)
    iqr = q75 - q25
    zero = np.flatnonzero(iqr == 0)
    if len(zero):
        warnings.warn(f"zero IQR on channels {zero.tolist()}; scaling by 1", RuntimeWarning, stacklevel=2)
        if report is not None:
            report.zero_iqr_channels.extend(int(c) for c in zero)
        iqr = np.where(iqr == 0, 1.0, iqr)
    scaled = (x - med[:, None]) / iqr[:, None]
    return replace(rec, data=np.clip(scaled, -clip, clip))


def epoch(
    rec: ContinuousRecording,
    window: tuple[float, float],
    baseline: tuple[float, float] | None = None,
    report: PreprocessReport | None = None,
) -> EpochSet:
    t0, t1 = window
    rate = rec.sampling_rate
    n_times = int(round((t1 - t0) * rate))
    offset = int(round(t0 * rate))
    if baseline is not None:
        b_start = max(0, int(round((baseline[0] - t0) * rate)))
        b_stop = min(n_times, int(round((baseline[1] - t0) * rate)))
        if b_stop <= b_start:
            raise ContractViolation(f"baseline {baseline} holds no samples at {rate} Hz")

    keep, tensors = [], []
    n_samples = rec.data.shape[1]
    for i, onset in enumerate(rec.onsets):
        start = int(onset) + offset
        if start < 0 or start + n_times > n_samples:
            _drop(report, i, "window exceeds recording")
            continue
        keep.append(i)
        tensors.append(rec.data[:, start : start + n_times])
    data = np.stack(tensors) if tensors else np.zeros((0, rec.data.shape[0], n_times))
    if baseline is not None and len(data):
        data = data - data[:, :, b_start:b_stop].mean(axis=2, keepdims=True)
    return EpochSet(data=data, window=(t0, t1), rate=rate, trial_ids=np.asarray(keep, dtype=np.int64))


def _drop(report, trial, reason):
    log.info("dropping trial %d: %s", trial, reason)
    if report is not None:
        report.dropped.append({"trial": int(trial), "reason": reason})


def cosine_drift_basis(n_times: int, tr_seconds: float, cutoff_period: float = DEFAULT_DRIFT_CUTOFF_S) -> np.ndarray:
    """Constant plus DCT-II cosines with period >= ``cutoff_period``; shape (n_times, k)."""
    order = int(math.floor(2.0 * n_times * tr_seconds / cutoff_period))
    n = np.arange(n_times)
    cols = [np.ones(n_times)]
    cols += [np.cos(np.pi * (n + 0.5) * k / n_times) for k in range(1, order + 1)]
    return np.column_stack(cols)


def fmri_detrend_zscore(
    series: np.ndarray,
    tr_seconds: float,
    cutoff_period: float = DEFAULT_DRIFT_CUTOFF_S,
    report: PreprocessReport | None = None,
) -> np.ndarray:
    """Remove cosine drifts per vertex by least squares, then z-score over the run.

    ``series`` is vertices x TRs.
    """
    series = np.asarray(series, dtype=float)
    if series.shape[1] < 2:
        raise ContractViolation("need at least 2 TRs")
    if cutoff_period <= 2 * tr_seconds:
        raise ContractViolation("cutoff_period must exceed twice the TR")
    basis = cosine_drift_basis(series.shape[1], tr_seconds, cutoff_period)
    q, _ = np.linalg.qr(basis)
    resid = series - (series @ q) @ q.T
    std = resid.std(axis=1)
    flat = std <= 1e-12 * max(1.0, float(np.abs(series).max(initial=0.0)))
    if flat.any():
        warnings.warn(f"{int(flat.sum())} vertices have zero variance after detrending", RuntimeWarning, stacklevel=2)
        if report is not None:
            report.zero_variance_vertices.extend(int(v) for v in np.flatnonzero(flat))
    out = np.zeros_like(resid)
    ok = ~flat
    out[ok] = (resid[ok] - resid[ok].mean(axis=1, keepdims=True)) / std[ok, None]
    return out


def fmri_epoch(
    series: np.ndarray,
    tr_seconds: float,
    window: tuple[float, float],
    onsets_s: np.ndarray,
    report: PreprocessReport | None = None,
) -> EpochSet:
    """Cut TR samples falling in ``[onset + t0, onset + t1)`` for each onset (seconds)."""
    t0, t1 = window
    n_trs = int(math.floor((t1 - t0) / tr_seconds + 1e-9))
    if n_trs < 1:
        raise ContractViolation("window must span at least one TR")
    n_total = series.shape[1]
    keep, tensors = [], []
    for i, onset in enumerate(np.asarray(onsets_s, dtype=float)):
        start = int(math.ceil((onset + t0) / tr_seconds - 1e-9))
        if start < 0 or start + n_trs > n_total:
            _drop(report, i, "event too close to run boundary")
            continue
        keep.append(i)
        tensors.append(series[:, start : start + n_trs])
    data = np.stack(tensors) if tensors else np.zeros((0, series.shape[0], n_trs))
    return EpochSet(data=data, window=(t0, t1), rate=1.0 / tr_seconds, trial_ids=np.asarray(keep, dtype=np.int64))


def window_views(
    epochs: EpochSet,
    mode: str = "full",
    width: float | None = None,
    start: float | None = None,
) -> list[EpochSet]:
    """Split an epoch set into decoding windows.

    ``sliding``: consecutive non-overlapping windows of ``width`` seconds.
    ``growing``: windows from ``start`` (default: epoch start) ending at each
    ``width`` step; the last one always ends at the epoch end.
    """
    t0, _ = epochs.window
    rate = epochs.rate
    n = epochs.n_times

    def view(a, b):
        lo, hi = t0 + a / rate, t0 + b / rate
        return EpochSet(
            data=epochs.data[:, :, a:b], window=(lo, hi), rate=rate,
            trial_ids=epochs.trial_ids, label=f"{mode}:{lo:.4f}:{hi:.4f}",
        )

    if mode == "full":
        return [replace(epochs, label="full")]
    if width is None:
        raise ContractViolation(f"{mode} windows need a width")
    step = int(round(width * rate))
    if step < 1 or step > n:
        raise ContractViolation(f"window width {width}s must cover 1..{n} samples")
    if mode == "sliding":
        return [view(a, a + step) for a in range(0, n - step + 1, step)]
    if mode == "growing":
        first = 0 if start is None else max(0, int(round((start - t0) * rate)))
        ends = list(range(first + step, n + 1, step))
        if not ends or ends[-1] != n:
            ends.append(n)
        return [view(first, b) for b in ends]
    raise ContractViolation(f"unknown window mode {mode!r}")
