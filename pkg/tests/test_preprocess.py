import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from neurodec.datasets import DATASETS
from neurodec.errors import ContractViolation
from neurodec.preprocess import (
    CLIP_VALUE, ContinuousRecording, EpochSet, PreprocessReport, cosine_drift_basis, epoch, fmri_detrend_zscore,
    fmri_epoch, highpass_downsample, robust_scale_clip, window_views,
)


def sine(freq, rate=1000.0, seconds=20.0, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return ContinuousRecording(amp * np.sin(2 * np.pi * freq * t)[None, :], rate)


def amplitude(x):
    # middle half, away from edges
    n = x.shape[-1]
    seg = x[..., n // 4 : 3 * n // 4]
    return np.sqrt(2) * seg.std()


def test_constant_signal_removed():
    rec = ContinuousRecording(np.full((2, 5000), 7.0), 1000.0)
    out = highpass_downsample(rec, 0.1, 120.0)
    assert out.sampling_rate == 120.0
    assert np.abs(out.data.mean()) < 1e-6 * 7.0


def test_passband_sine_preserved():
    out = highpass_downsample(sine(30.0), 0.1, 120.0)
    assert abs(amplitude(out.data) - 1.0) < 0.05


def test_alias_band_sine_attenuated():
    out = highpass_downsample(sine(80.0), 0.1, 120.0)
    assert 20 * np.log10(amplitude(out.data)) <= -20


def test_dc_attenuation_40db():
    # a very slow sine well below the cutoff stands in for DC drift
    out = highpass_downsample(sine(0.001, seconds=200.0, amp=1.0), 0.1, 120.0)
    assert 20 * np.log10(np.abs(out.data).max() + 1e-300) < -40


def test_highpass_rejects_bad_cutoff():
    rec = sine(5.0, seconds=1.0)
    with pytest.raises(ContractViolation):
        highpass_downsample(rec, 60.0, 120.0)
    with pytest.raises(ContractViolation):
        highpass_downsample(rec, 0.1, 2000.0)


def test_non_integer_ratio_resamples():
    rec = sine(10.0, rate=1000.0, seconds=5.0)
    rec = ContinuousRecording(rec.data, 1000.0, np.array([100, 2500]), np.array([0, 1]))
    out = highpass_downsample(rec, 0.1, 300.0 / 7)
    assert abs(out.sampling_rate - 300.0 / 7) < 1e-12
    assert out.onsets.tolist() == [round(100 * 3 / 70), round(2500 * 3 / 70)]


def test_robust_scale_quantile_oracle():
    rec = ContinuousRecording(np.array([[1.0, 2.0, 3.0, 4.0]]), 1.0)
    out = robust_scale_clip(rec)
    np.testing.assert_allclose(out.data[0], [-1.0, -1 / 3, 1 / 3, 1.0], atol=1e-12)


def test_robust_scale_clips_exactly():
    data = np.array([[0.0, 1.0, 2.0, 3.0, 1e6, -1e6]])
    out = robust_scale_clip(ContinuousRecording(data, 1.0)).data
    assert out.max() == CLIP_VALUE and out.min() == -CLIP_VALUE


def test_robust_scale_constant_channel_warns():
    report = PreprocessReport()
    with pytest.warns(RuntimeWarning):
        out = robust_scale_clip(ContinuousRecording(np.ones((2, 8)), 1.0), report=report)
    assert np.all(out.data == 0)
    assert report.zero_iqr_channels == [0, 1]


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 16), elements=st.floats(-1e6, 1e6)))
def test_robust_scale_bounded(data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = robust_scale_clip(ContinuousRecording(data, 1.0)).data
    assert np.all(np.abs(out) <= CLIP_VALUE)


def test_epoch_lengths_match_tables():
    rec = ContinuousRecording(np.zeros((1, 2000)), 120.0, np.array([500]), np.array([0]))
    assert epoch(rec, DATASETS["Gifford2022"].epoch_window).n_times == 144
    assert epoch(rec, DATASETS["Hebart2023meg"].epoch_window).n_times == 180
    assert epoch(rec, (-0.2, 1.0)).n_times == 144
    assert epoch(rec, (-0.5, 1.0)).n_times == 180


def test_epoch_baseline_zero_mean(rng):
    data = rng.standard_normal((4, 3000)) + 5.0
    rec = ContinuousRecording(data, 120.0, np.array([200, 700, 1500]), np.array([0, 1, 2]))
    ep = epoch(rec, (-0.3, 1.0), baseline=(-0.05, 0.0))
    b = int(round(0.25 * 120)), int(round(0.3 * 120))
    assert np.abs(ep.data[:, :, b[0] : b[1]].mean(axis=2)).max() < 1e-9


def test_epoch_drops_out_of_range_with_log():
    rec = ContinuousRecording(np.zeros((1, 300)), 120.0, np.array([10, 100, 290]), np.array([0, 1, 2]))
    report = PreprocessReport()
    ep = epoch(rec, (-0.2, 1.0), report=report)
    assert ep.trial_ids.tolist() == [1]
    assert [d["trial"] for d in report.dropped] == [0, 2]


def test_epoch_empty_baseline_errors():
    rec = ContinuousRecording(np.zeros((1, 300)), 10.0, np.array([100]), np.array([0]))
    with pytest.raises(ContractViolation):
        epoch(rec, (-0.2, 1.0), baseline=(-0.02, -0.01))


def test_drift_basis_annihilated():
    basis = cosine_drift_basis(300, 2.0, 128.0)
    assert basis.shape[1] == 1 + int(np.floor(2 * 300 * 2.0 / 128.0))
    series = np.tile(basis[:, 3], (2, 1)) * 4.0
    with pytest.warns(RuntimeWarning):
        out = fmri_detrend_zscore(series, 2.0)
    assert np.abs(out).max() < 1e-8


def test_detrend_zscore_contract(rng):
    series = rng.standard_normal((5, 400)) + np.linspace(0, 3, 400)
    out = fmri_detrend_zscore(series, 1.5)
    np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=1), 1, atol=1e-9)
    basis = cosine_drift_basis(400, 1.5)
    assert np.abs(out @ basis).max() < 1e-8
    np.testing.assert_allclose(fmri_detrend_zscore(out, 1.5), out, atol=1e-6)


def test_detrend_preconditions():
    with pytest.raises(ContractViolation):
        fmri_detrend_zscore(np.zeros((1, 1)), 1.0)
    with pytest.raises(ContractViolation):
        fmri_detrend_zscore(np.zeros((1, 10)), 100.0, cutoff_period=128.0)


@pytest.mark.parametrize("name", ["Shen2019", "Hebart2023fmri", "Chang2019", "Allen2022"])
def test_fmri_epochs_have_five_trs(name):
    spec = DATASETS[name]
    series = np.zeros((2, 200))
    ep = fmri_epoch(series, spec.tr_seconds, spec.epoch_window, np.array([20.0, 60.0]))
    assert ep.n_times == 5


def test_fmri_epoch_drops_near_run_end():
    report = PreprocessReport()
    ep = fmri_epoch(np.zeros((1, 20)), 2.0, (3.0, 13.0), np.array([0.0, 30.0]), report)
    assert ep.trial_ids.tolist() == [0]
    assert report.dropped[0]["trial"] == 1


def _epochs(n_times, rate, t0=-0.2):
    data = np.arange(2 * 3 * n_times, dtype=float).reshape(2, 3, n_times)
    return EpochSet(data, (t0, t0 + n_times / rate), rate, np.arange(2))


def test_sliding_windows():
    views = window_views(_epochs(144, 120.0), "sliding", 0.1)
    assert len(views) == 12 and all(v.n_times == 12 for v in views)
    assert views[0].window[0] == pytest.approx(-0.2)
    assert views[-1].window[1] == pytest.approx(1.0)
    assert len(window_views(_epochs(5, 1 / 1.5, 3.0), "sliding", 1.5)) == 5


def test_growing_windows_end_on_full_epoch():
    ep = _epochs(144, 120.0)
    views = window_views(ep, "growing", 0.25)
    assert np.array_equal(views[-1].data, ep.data)
    assert all(v.window[0] == pytest.approx(-0.2) for v in views)
    assert [v.n_times for v in views][:3] == [30, 60, 90]


def test_full_view_identity_and_errors():
    ep = _epochs(10, 10.0)
    assert np.array_equal(window_views(ep, "full")[0].data, ep.data)
    with pytest.raises(ContractViolation):
        window_views(ep, "sliding", 5.0)
    with pytest.raises(ContractViolation):
        window_views(ep, "sliding")
