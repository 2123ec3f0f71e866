import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurodec.datasets import DeviceKind
from neurodec.errors import ContractViolation
from neurodec.linear import DECODING_ALPHAS, ENCODING_ALPHAS, encode, ridge_fit, stepwise_decode
from neurodec.synthgen import device_presets, generate, with_overrides


def normal_equations(X, Y, alpha):
    """Direct centred solve: (Xc'Xc + alpha I)^-1 Xc'Yc, intercept restored."""
    xm, ym = X.mean(0), Y.mean(0)
    Xc, Yc = X - xm, Y - ym
    W = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ Yc)
    return W.T, ym - xm @ W


def brute_loo(X, Y, alpha):
    """Refit without each row in turn (intercept re-estimated each time)."""
    errs = []
    for i in range(len(X)):
        keep = np.arange(len(X)) != i
        W, b = normal_equations(X[keep], Y[keep], alpha)
        errs.append((Y[i] - (X[i] @ W.T + b)) ** 2)
    return np.mean(errs, axis=0)


def test_grid_constants():
    assert len(DECODING_ALPHAS) == 33 and DECODING_ALPHAS[0] == pytest.approx(1e-4) and DECODING_ALPHAS[-1] == pytest.approx(1e8)
    assert len(ENCODING_ALPHAS) == 35 and ENCODING_ALPHAS[0] == pytest.approx(1e-12) and ENCODING_ALPHAS[-1] == pytest.approx(1e22)


def test_fixed_alpha_matches_normal_equations(rng):
    X, Y = rng.standard_normal((20, 5)), rng.standard_normal((20, 3))
    fit = ridge_fit(X, Y, [2.5])
    W, b = normal_equations(X, Y, 2.5)
    np.testing.assert_allclose(fit.weights, W, atol=1e-8)
    np.testing.assert_allclose(fit.intercept, b, atol=1e-8)


def test_loo_matches_brute_force(rng):
    X = rng.standard_normal((15, 6))
    Y = X @ rng.standard_normal((6, 2)) + rng.standard_normal((15, 2))
    grid = [0.01, 0.3, 3.0, 30.0]
    fit = ridge_fit(X, Y, grid)
    oracle = np.array([brute_loo(X, Y, a).mean() for a in grid])
    np.testing.assert_allclose(fit.cv_errors, oracle, rtol=1e-9)
    assert fit.alpha_selected == grid[int(np.argmin(oracle))]


def test_identity_system_small_alpha():
    # with an intercept the minimum-norm solution on centred identity data is I - 11'/n;
    # predictions reproduce Y exactly
    X = np.eye(4)
    fit = ridge_fit(X, X, [1e-10])
    np.testing.assert_allclose(fit.predict(X), X, atol=1e-6)
    np.testing.assert_allclose(fit.weights, np.eye(4) - 0.25, atol=1e-6)


def test_large_alpha_shrinks_to_zero(rng):
    X, Y = rng.standard_normal((30, 4)), rng.standard_normal((30, 2))
    assert np.abs(ridge_fit(X, Y, [1e8]).weights).max() < 1e-4


def test_rank_deficient_ok(rng):
    X = rng.standard_normal((10, 3))
    X = np.hstack([X, X])
    fit = ridge_fit(X, rng.standard_normal(10))
    assert np.isfinite(fit.weights).all()


def test_selected_alpha_has_minimal_cv_error(rng):
    X, Y = rng.standard_normal((40, 8)), rng.standard_normal((40, 3))
    fit = ridge_fit(X, Y)
    assert fit.alpha_selected in fit.alpha_grid
    j = list(fit.alpha_grid).index(fit.alpha_selected)
    assert np.all(fit.cv_errors[j] <= fit.cv_errors)


def test_kfold_path(rng):
    X = rng.standard_normal((40, 5))
    Y = X @ rng.standard_normal((5, 2)) + 0.1 * rng.standard_normal((40, 2))
    fit = ridge_fit(X, Y, cv=5)
    assert fit.alpha_selected in fit.alpha_grid
    W, _ = normal_equations(X, Y, fit.alpha_selected)
    np.testing.assert_allclose(fit.weights, W, atol=1e-8)


def test_per_target_alpha(rng):
    X = rng.standard_normal((60, 5))
    Y = np.column_stack([X @ rng.standard_normal(5), rng.standard_normal(60)])
    fit = ridge_fit(X, Y, alpha_per_target=True)
    assert fit.alpha_selected.shape == (2,)
    assert fit.alpha_selected[0] < fit.alpha_selected[1]


def test_ridge_errors(rng):
    with pytest.raises(ContractViolation):
        ridge_fit(np.ones((1, 2)), np.ones(1))
    with pytest.raises(ContractViolation):
        ridge_fit(rng.standard_normal((5, 2)), rng.standard_normal(5), [])
    with pytest.raises(ContractViolation):
        ridge_fit(rng.standard_normal((5, 2)), rng.standard_normal(5), [-1.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-1e3, 1e3))
def test_constant_shift_absorbed_by_intercept(seed, shift):
    r = np.random.default_rng(seed)
    X, Y = r.standard_normal((25, 4)), r.standard_normal((25, 2))
    a, b = ridge_fit(X, Y), ridge_fit(X, Y + shift)
    np.testing.assert_allclose(b.predict(X) - shift, a.predict(X), atol=1e-9 * max(1.0, abs(shift)))


def _stepwise_data(seed, snr, n=240, S=12, T=20, F=4, active=(8, 12)):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((n, F))
    A = r.standard_normal((S, F))
    kernel = np.zeros(T)
    kernel[active[0] : active[1] + 1] = 1.0
    X = (Z @ A.T)[:, :, None] * kernel + r.standard_normal((n, S, T)) / snr
    return X, Z


def test_stepwise_signal_only_inside_window():
    X, Z = _stepwise_data(0, snr=1.0)
    tr, te = np.arange(160), np.arange(160, 240)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = stepwise_decode(X, Z, tr, te)
    sigma = 1 / np.sqrt(len(te) * Z.shape[1])
    inside = np.zeros(len(r), dtype=bool)
    inside[8:13] = True
    assert np.all(r[inside] > 3 * sigma)
    assert np.all(np.abs(r[~inside]) < 3 * sigma)


def test_stepwise_noiseless():
    X, Z = _stepwise_data(1, snr=1e9)
    assert stepwise_decode(X, Z, np.arange(160), np.arange(160, 240)).max() > 0.99


def test_stepwise_shuffled_labels_null():
    X, Z = _stepwise_data(2, snr=1.0)
    Zs = Z[np.random.default_rng(9).permutation(len(Z))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = stepwise_decode(X, Zs, np.arange(160), np.arange(160, 240))
    sigma = 1 / np.sqrt(80 * 4)
    assert abs(r.mean()) < 3 * sigma


def test_encode_linear_channel(rng):
    Z = rng.standard_normal((100, 6))
    resp = Z @ rng.standard_normal((6, 3))
    assert np.all(encode(Z, resp) > 0.99)


def test_encode_noise_channel(rng):
    Z = rng.standard_normal((200, 6))
    r = encode(Z, rng.standard_normal((200, 1)))
    assert abs(r[0]) < 3 / np.sqrt(100)


def test_encode_constant_channel_warns(rng):
    Z = rng.standard_normal((40, 3))
    resp = np.column_stack([Z[:, 0], np.ones(40)])
    with pytest.warns(RuntimeWarning):
        r = encode(Z, resp)
    assert r[1] == 0.0


def test_encode_occipital_channels_score_higher():
    cfg = with_overrides(device_presets()[DeviceKind.EEG], n_subjects=1, n_images=400, snr=0.5, seed=2)
    ds = generate(cfg)
    t_peak = int(np.argmax(ds.forward.temporal_kernel))
    r = encode(ds.targets, ds.X[:, :, t_peak])
    occ = ds.forward.occipital
    assert r[occ].mean() > r[~occ].mean()


def test_encode_lags_shape(rng):
    Z = rng.standard_normal((50, 2))
    resp = np.roll(Z[:, 0], 1)[:, None]
    r0 = encode(Z, resp)
    r1 = encode(Z, resp, lags=[0, 1])
    assert r1[0] > r0[0]
