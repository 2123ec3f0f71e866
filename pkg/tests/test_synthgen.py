import math
import time

import numpy as np
import pytest

from neurodec import linear
from neurodec.datasets import DeviceKind
from neurodec.errors import ContractViolation
from neurodec.evaluation import pearson_featurewise
from neurodec.synthgen import SynthConfig, device_presets, generate, generate_continuous, response_curve, with_overrides


def held_out_rep_r(ds):
    """Ridge per subject: fit on repetition 1, score on repetition 2."""
    reps = np.array([t.repetition_index for t in ds.trials])
    subj = ds.subject_ids
    Xf = ds.X.reshape(len(ds.X), -1)
    preds, targets = [], []
    for s in np.unique(subj):
        tr, te = (subj == s) & (reps == 1), (subj == s) & (reps == 2)
        fit = linear.ridge_fit(Xf[tr], ds.targets[tr])
        preds.append(fit.predict(Xf[te]))
        targets.append(ds.targets[te])
    return pearson_featurewise(np.concatenate(preds), np.concatenate(targets)), sum(len(t) for t in targets)


def test_noiseless_is_linearly_decodable():
    cfg = SynthConfig(snr=math.inf, n_images=60, n_subjects=2, embed_dim=8, seed=3)
    r, _ = held_out_rep_r(generate(cfg))
    assert r > 0.99


def test_pure_noise_is_not_decodable():
    cfg = SynthConfig(snr=0.01, n_images=150, n_subjects=2, embed_dim=8, seed=4)
    ds = generate(cfg)
    r, n = held_out_rep_r(ds)
    assert abs(r) < 3 / math.sqrt(n * cfg.embed_dim)


def test_bit_identical_for_same_seed():
    cfg = SynthConfig(seed=11, n_images=20)
    a, b = generate(cfg), generate(cfg)
    assert a.X.tobytes() == b.X.tobytes()
    assert a.embeddings.tobytes() == b.embeddings.tobytes()
    assert a.trials == b.trials
    assert generate(with_overrides(cfg, seed=12)).X.tobytes() != a.X.tobytes()


def test_presets_snr_strictly_ordered():
    p = device_presets()
    snr = [p[d].snr for d in (DeviceKind.FMRI7T, DeviceKind.FMRI3T, DeviceKind.MEG, DeviceKind.EEG)]
    assert snr == sorted(snr, reverse=True) and len(set(snr)) == 4
    for cfg in p.values():
        assert cfg.channels <= 64 and cfg.timepoints <= 64


def test_eeg_preset_window():
    cfg = device_presets()[DeviceKind.EEG]
    assert cfg.window == pytest.approx((-0.2, 1.0))
    # 120 Hz scaled down by 4 keeps the 1.2 s window
    assert cfg.timepoints * 4 == 144


@pytest.mark.parametrize("device", list(DeviceKind))
def test_presets_generate_fast_and_finite(device):
    t = time.perf_counter()
    ds = generate(device_presets()[device])
    assert time.perf_counter() - t < 1.0
    assert np.isfinite(ds.X).all()
    assert ds.X.shape == (len(ds.trials), ds.config.channels, ds.config.timepoints)


def test_kernel_shapes():
    eeg = device_presets()[DeviceKind.EEG]
    ds = generate(with_overrides(eeg, n_images=4))
    k = ds.forward.temporal_kernel
    assert np.max(np.abs(k)) == pytest.approx(1.0)
    assert np.all(k[ds.times <= 0] == 0)
    assert 0 < ds.times[np.argmax(k)] < 0.2  # early post-onset
    fm = device_presets()[DeviceKind.FMRI3T]
    ds = generate(with_overrides(fm, n_images=4))
    k = ds.forward.temporal_kernel
    # hemodynamic-like: peak sample lies within one TR of the window centre
    assert abs(ds.times[np.argmax(k)] - np.mean(fm.window)) <= 1 / fm.sampling_rate
    assert response_curve(DeviceKind.FMRI3T, np.array([-1.0, 0.0]), 5.0).tolist() == [0.0, 0.0]


def test_config_validation_and_roundtrip():
    with pytest.raises(ContractViolation):
        SynthConfig(snr=0)
    with pytest.raises(ContractViolation):
        SynthConfig(n_reps=0)
    cfg = SynthConfig(device="meg", seed=5)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_trial_table_is_unique_and_categorised():
    cfg = SynthConfig(n_images=40, n_reps=3, n_subjects=2, n_categories=8)
    ds = generate(cfg)
    keys = {(t.subject_id, t.image_id, t.repetition_index) for t in ds.trials}
    assert len(keys) == 40 * 3 * 2
    assert {t.category_id for t in ds.trials} == set(range(8))


def test_continuous_recordings_align_with_trials():
    cfg = with_overrides(device_presets()[DeviceKind.MEG], n_images=10, n_subjects=2)
    recs, emb, trials, fwd = generate_continuous(cfg)
    assert len(recs) == 2 and emb.shape == (10, cfg.embed_dim)
    for s, rec in enumerate(recs):
        assert rec.sampling_rate == 4 * cfg.sampling_rate
        rows = sorted((t for t in trials if t.subject_id == s), key=lambda t: t.onset_time)
        assert rec.image_ids.tolist() == [t.image_id for t in rows]
        assert np.all(np.diff(rec.onsets) > 0)
        assert np.isfinite(rec.data).all()
