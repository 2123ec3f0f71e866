"""Synthetic paired brain/embedding datasets.

Each subject sees images through a linear forward model: a channel x
feature mixing matrix applied to the image embedding, modulated over time by
a fixed response curve, plus iid Gaussian noise of standard deviation
``1 / snr``. Subjects share most of their mixing matrix, so pooling subjects
helps, and a posterior ("occipital") channel group carries a larger gain.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datasets import DeviceKind, TrialRecord
from .errors import ContractViolation
from .preprocess import ContinuousRecording


@dataclass(frozen=True)
class SynthConfig:
    device: DeviceKind = DeviceKind.EEG
    channels: int = 32
    timepoints: int = 36
    embed_dim: int = 16
    n_images: int = 200
    n_reps: int = 2
    n_subjects: int = 4
    snr: float = 0.2
    seed: int = 0
    sampling_rate: float = 30.0
    t_start: float = -0.2
    n_categories: int | None = None
    soa_seconds: float = 0.5
    subject_variability: float = 0.3
    occipital_fraction: float = 0.25
    occipital_gain: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "device", DeviceKind(self.device))
        if not self.snr > 0:
            raise ContractViolation("snr must be > 0")
        counts = ("channels", "timepoints", "embed_dim", "n_images", "n_reps", "n_subjects")
        for name in counts:
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_start, self.t_start + self.timepoints / self.sampling_rate)

    @property
    def categories(self) -> int:
        return self.n_categories or max(2, self.n_images // 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["device"] = self.device.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def device_presets() -> dict[DeviceKind, SynthConfig]:
    """Desk-scale defaults; SNR strictly ordered 7T > 3T > MEG > EEG."""
    return {
        DeviceKind.EEG: SynthConfig(
            device=DeviceKind.EEG, channels=32, sampling_rate=30.0, t_start=-0.2, timepoints=36,
            snr=0.2, n_subjects=8, soa_seconds=0.2,
        ),
        DeviceKind.MEG: SynthConfig(
            device=DeviceKind.MEG, channels=48, sampling_rate=30.0, t_start=-0.5, timepoints=45,
            snr=0.25, soa_seconds=1.6,
        ),
        DeviceKind.FMRI3T: SynthConfig(
            device=DeviceKind.FMRI3T, channels=64, sampling_rate=1 / 1.5, t_start=3.0, timepoints=5,
            snr=0.3, n_subjects=3, soa_seconds=4.5,
        ),
        DeviceKind.FMRI7T: SynthConfig(
            device=DeviceKind.FMRI7T, channels=64, sampling_rate=1 / 1.6, t_start=3.0, timepoints=5,
            snr=0.5, soa_seconds=4.0,
        ),
    }


@dataclass
class ForwardModel:
    mixing: np.ndarray  # (n_subjects, channels, F)
    temporal_kernel: np.ndarray  # (timepoints,), unit peak
    noise_scale: float
    positions: np.ndarray  # (channels, 2) in [0, 1]^2
    occipital: np.ndarray  # boolean mask over channels
    device: DeviceKind = DeviceKind.EEG
    peak_latency: float = 0.0

    def kernel_at(self, latency) -> np.ndarray:
        return response_curve(self.device, np.asarray(latency, dtype=float), self.peak_latency)


def response_curve(device: DeviceKind, latency: np.ndarray, peak: float) -> np.ndarray:
    """Unit-peak response at the given post-onset latencies (zero before onset)."""
    t = np.asarray(latency, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if device.is_fmri:
        shape = 3.0
        out[pos] = (t[pos] / peak) ** shape * np.exp(shape * (1.0 - t[pos] / peak))
    else:
        # damped 5 Hz oscillation: positive then negative lobe
        out[pos] = np.sin(2 * np.pi * 5.0 * t[pos]) * np.exp(-t[pos] / 0.2)
        ref = np.linspace(0, 0.2, 2001)[1:]
        out /= np.max(np.sin(2 * np.pi * 5.0 * ref) * np.exp(-ref / 0.2))
    return out


@dataclass
class SynthDataset:
    X: np.ndarray  # (n_trials, channels, timepoints)
    embeddings: np.ndarray  # (n_images, F)
    trials: list[TrialRecord]
    forward: ForwardModel
    config: SynthConfig
    times: np.ndarray = field(default=None)

    @property
    def subject_ids(self) -> np.ndarray:
        return np.array([t.subject_id for t in self.trials], dtype=np.int64)

    @property
    def image_ids(self) -> np.ndarray:
        return np.array([t.image_id for t in self.trials], dtype=np.int64)

    @property
    def targets(self) -> np.ndarray:
        """Embedding of the image shown on each trial, (n_trials, F)."""
        return self.embeddings[self.image_ids]


def build_forward_model(config: SynthConfig, rng: np.random.Generator) -> ForwardModel:
    c, f = config.channels, config.embed_dim
    positions = rng.uniform(0.0, 1.0, size=(c, 2))
    n_occ = max(1, int(round(config.occipital_fraction * c)))
    occipital = np.zeros(c, dtype=bool)
    occipital[np.argsort(positions[:, 1], kind="stable")[:n_occ]] = True
    gain = np.where(occipital, config.occipital_gain, 1.0)

    shared = rng.standard_normal((c, f)) / math.sqrt(f)
    own = rng.standard_normal((config.n_subjects, c, f)) / math.sqrt(f)
    mixing = (shared[None] + config.subject_variability * own) * gain[None, :, None]

    t0, t1 = config.window
    peak = 0.5 * (t0 + t1) if config.device.is_fmri else 0.0
    times = t0 + np.arange(config.timepoints) / config.sampling_rate
    kernel = response_curve(config.device, times, peak)
    top = np.max(np.abs(kernel))
    if top > 0:
        kernel = kernel / top
    noise = 0.0 if math.isinf(config.snr) else 1.0 / config.snr
    return ForwardModel(mixing, kernel, noise, positions, occipital, config.device, peak)


def _trial_table(config: SynthConfig, rng: np.random.Generator) -> list[TrialRecord]:
    per_cat = math.ceil(config.n_images / config.categories)
    trials = []
    for s in range(config.n_subjects):
        order = [(img, rep) for rep in range(1, config.n_reps + 1) for img in range(config.n_images)]
        perm = rng.permutation(len(order))
        for pos, j in enumerate(perm):
            img, rep = order[j]
            trials.append(
                TrialRecord(
                    subject_id=s, image_id=img, category_id=img // per_cat,
                    repetition_index=rep, session_id=rep - 1,
                    onset_time=round(pos * config.soa_seconds, 9),
                )
            )
    return trials


def generate(config: SynthConfig) -> SynthDataset:
    """Epoched synthetic data; bit-identical for identical configs."""
    rng = np.random.default_rng(config.seed)
    embeddings = rng.standard_normal((config.n_images, config.embed_dim))
    fwd = build_forward_model(config, rng)
    trials = _trial_table(config, rng)
    subj = np.array([t.subject_id for t in trials])
    img = np.array([t.image_id for t in trials])

    patterns = np.einsum("ncf,nf->nc", fwd.mixing[subj], embeddings[img])
    X = patterns[:, :, None] * fwd.temporal_kernel[None, None, :]
    if fwd.noise_scale > 0:
        X = X + fwd.noise_scale * rng.standard_normal(X.shape)
    times = config.window[0] + np.arange(config.timepoints) / config.sampling_rate
    return SynthDataset(X=X, embeddings=embeddings, trials=trials, forward=fwd, config=config, times=times)


def generate_continuous(
    config: SynthConfig,
    oversample: int = 4,
    lead_in: float | None = None,
    drift_amplitude: float = 1.0,
) -> tuple[list[ContinuousRecording], np.ndarray, list[TrialRecord], ForwardModel]:
    """Continuous recordings, one per subject, with overlapping responses and slow drift.

    M/EEG recordings are sampled at ``oversample * sampling_rate`` so the
    preprocessing pipeline has something to downsample; fMRI runs are sampled
    once per TR. Onsets are stored as samples at the recording's own rate.
    """
    rng = np.random.default_rng(config.seed)
    embeddings = rng.standard_normal((config.n_images, config.embed_dim))
    fwd = build_forward_model(config, rng)
    trials = _trial_table(config, rng)
    fmri = config.device.is_fmri
    rate = config.sampling_rate if fmri else config.sampling_rate * oversample
    t0, t1 = config.window
    if lead_in is None:
        lead_in = max(1.0, -t0 + 0.5)
    support = (3.0 * fwd.peak_latency + 10.0) if fmri else 1.5
    tail = max(t1, support) + 1.0

    recordings = []
    for s in range(config.n_subjects):
        rows = sorted((t for t in trials if t.subject_id == s), key=lambda t: t.onset_time)
        onset_s = np.array([lead_in + t.onset_time for t in rows])
        n = int(math.ceil((onset_s[-1] + tail) * rate))
        times = np.arange(n) / rate
        data = np.zeros((config.channels, n))
        n_resp = int(math.ceil(support * rate))
        for t, on in zip(rows, onset_s):
            a = int(math.ceil(on * rate))
            b = min(n, a + n_resp)
            curve = fwd.kernel_at(times[a:b] - on)
            data[:, a:b] += np.outer(fwd.mixing[s] @ embeddings[t.image_id], curve)
        phase = rng.uniform(0, 2 * np.pi, size=(config.channels, 1))
        data += drift_amplitude * np.sin(2 * np.pi * 0.01 * times[None, :] + phase) + drift_amplitude
        if fwd.noise_scale > 0:
            data += fwd.noise_scale * rng.standard_normal(data.shape)
        onsets = np.round(onset_s * rate).astype(np.int64)
        recordings.append(
            ContinuousRecording(
                data=data, sampling_rate=rate, onsets=onsets,
                image_ids=np.array([t.image_id for t in rows]), channel_positions=fwd.positions,
            )
        )
    return recordings, embeddings, trials, fwd


def with_overrides(config: SynthConfig, **kw) -> SynthConfig:
    return replace(config, **kw)
