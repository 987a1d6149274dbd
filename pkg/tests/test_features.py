from __future__ import annotations

import math
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from falsify.bars import Bar, RTH
from falsify.features import (FeatureError, GmmDegenerateError, OuFit, RegimeGMM,
                              RollingSpec, Statistic, gmm_fit, hurst_exponent,
                              kalman_velocity, markov_transition_prob, ou_fit,
                              ou_zscore, regime_labels, rolling_stat,
                              volume_zscore)


def bars_from_arrays(opens, highs, lows, closes, volumes):
    t0 = datetime(2022, 1, 3, 9, 30)
    return [Bar(t0 + timedelta(minutes=5 * i), float(o), float(h), float(lo),
                float(c), int(v))
            for i, (o, h, lo, c, v) in enumerate(zip(opens, highs, lows, closes, volumes))]


def flat_bars(n, rng=2.0, volume=1000):
    o = [100.0] * n
    return bars_from_arrays(o, [100.0 + rng / 2] * n, [100.0 - rng / 2] * n,
                            o, [volume] * n)


# -- rolling statistics -------------------------------------------------------

def test_mean_range_constant_bars():
    bars = flat_bars(30)
    out = rolling_stat(bars, RollingSpec(20, Statistic.MEAN_RANGE))
    assert np.all(np.isnan(out[:20]))  # strictly-prior window needs 20 bars
    assert np.allclose(out[20:], 2.0)


def test_mean_range_spreadsheet_window():
    rng = np.random.default_rng(11)
    ranges = rng.uniform(1.0, 6.0, size=25)
    bars = bars_from_arrays([100] * 25, 100 + ranges, [100.0] * 25,
                            [100] * 25, [1] * 25)
    out = rolling_stat(bars, RollingSpec(20, Statistic.MEAN_RANGE))
    # index 24 must average ranges of bars 4..23 only
    assert out[24] == pytest.approx(np.mean(ranges[4:24]), abs=1e-12)


def test_rolling_window_validation():
    with pytest.raises(FeatureError):
        RollingSpec(1, Statistic.MEAN_RANGE)


def test_atr_uses_prior_close_gap():
    # second bar gaps far above its own high-low span
    bars = bars_from_arrays([100, 110], [101, 111], [99, 109], [100, 110], [1, 1])
    bars += flat_bars(25)[2:]
    out = rolling_stat(bars[:25], RollingSpec(2, Statistic.ATR))
    # true range of bar 1 = max(2, |111-100|, |109-100|) = 11
    assert out[2] == pytest.approx((2.0 + 11.0) / 2)


def test_volume_zscore_arithmetic():
    vols = [900] * 25 + [1100] * 25 + [1050]  # prior mean 1000, pop std 100
    bars = flat_bars(51)
    bars = [Bar(b.ts, b.open, b.high, b.low, b.close, v) for b, v in zip(bars, vols)]
    z = volume_zscore(bars, 50)
    assert z[50] == pytest.approx(0.5, abs=1e-12)


def test_volume_zscore_degenerate_std_absent():
    bars = flat_bars(60)
    z = volume_zscore(bars, 50)
    assert np.all(np.isnan(z))


def test_volume_zscore_brute_force():
    rng = np.random.default_rng(3)
    vols = rng.integers(500, 2000, size=60)
    bars = flat_bars(60)
    bars = [Bar(b.ts, b.open, b.high, b.low, b.close, int(v))
            for b, v in zip(bars, vols)]
    z = volume_zscore(bars, 20)
    for i in range(60):
        win = vols[i - 20:i].astype(float) if i >= 20 else None
        if win is None:
            assert np.isnan(z[i])
        else:
            expect = (vols[i] - win.mean()) / win.std()
            assert z[i] == pytest.approx(expect, abs=1e-10)


# -- Kalman velocity ----------------------------------------------------------

def test_kalman_constant_series_velocity_zero():
    v = kalman_velocity([100.0] * 80, q=1e-3, r=1.0)
    assert abs(v[-1]) < 1e-6
    assert np.all(np.abs(v[50:]) < 1e-6)


def test_kalman_ramp_converges_to_slope():
    closes = [100.0 + 2.0 * i for i in range(300)]
    v = kalman_velocity(closes, q=1e-3, r=1.0)
    assert v[-1] == pytest.approx(2.0, abs=1e-3)


def test_kalman_noisy_ramp_monte_carlo():
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        closes = 100.0 + 2.0 * np.arange(500) + rng.normal(0, 0.5, 500)
        v = kalman_velocity(closes, q=1e-3, r=1.0)
        errs.append(abs(v[-1] - 2.0))
    assert max(errs) < 0.2


def test_kalman_covariance_stays_psd():
    rng = np.random.default_rng(0)
    closes = np.cumsum(rng.normal(0, 5, 10_000)) + 15000
    _, covs = kalman_velocity(closes, q=1e-3, r=1.0, return_cov=True)
    p00, p01, p11 = covs[:, 0], covs[:, 1], covs[:, 2]
    assert np.all(p00 >= 0)
    assert np.all(p11 >= 0)
    assert np.all(p00 * p11 - p01 * p01 >= -1e-12)


def test_kalman_rejects_bad_input():
    with pytest.raises(FeatureError):
        kalman_velocity([])
    with pytest.raises(FeatureError):
        kalman_velocity([1.0, float("nan")])
    with pytest.raises(FeatureError):
        kalman_velocity([1.0, 2.0], q=0.0)


def test_kalman_velocity_is_causal():
    rng = np.random.default_rng(5)
    closes = list(np.cumsum(rng.normal(0, 1, 200)) + 100)
    v1 = kalman_velocity(closes)
    mutated = closes[:150] + [c + 500.0 for c in closes[150:]]
    v2 = kalman_velocity(mutated)
    assert np.array_equal(v1[:150], v2[:150])


# -- Hurst exponent -----------------------------------------------------------

def test_hurst_iid_near_half():
    estimates = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        estimates.append(hurst_exponent(rng.normal(0, 1, 10_000)))
    estimates = np.array(estimates)
    assert np.all(np.abs(estimates - 0.5) < 0.07)


def test_hurst_persistent_series_above_06():
    rng = np.random.default_rng(1)
    noise = rng.normal(0, 1, 10_000)
    smoothed = np.convolve(noise, np.ones(30) / 30, mode="valid")
    assert hurst_exponent(smoothed) > 0.6


def test_hurst_antipersistent_below_half():
    alt = np.tile([1.0, -1.0], 2000)
    assert hurst_exponent(alt) < 0.3


def test_hurst_rejects_constant_or_short():
    with pytest.raises(FeatureError):
        hurst_exponent(np.zeros(5000))
    with pytest.raises(FeatureError):
        hurst_exponent(np.random.default_rng(0).normal(size=50))


# -- OU fit and z-score -------------------------------------------------------

def simulate_ou(phi, mu, sigma, n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = mu
    for t in range(1, n):
        x[t] = mu + phi * (x[t - 1] - mu) + rng.normal(0, sigma)
    return x


def test_ou_half_life_recovery_is_close_on_fixed_seed():
    phi = math.exp(-math.log(2) / 7.85)
    x = simulate_ou(phi, 15000.0, 5.0, 5000, seed=42)
    fit = ou_fit(x)
    assert fit.half_life is not None
    assert fit.half_life == pytest.approx(7.85, rel=0.10)


def test_ou_phi_half_gives_unit_half_life():
    x = simulate_ou(0.5, 100.0, 1.0, 20_000, seed=7)
    fit = ou_fit(x)
    assert fit.half_life == pytest.approx(1.0, rel=0.05)


def test_ou_random_walk_disables_half_life():
    undefined = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = np.cumsum(rng.normal(0, 1, 2000)) + 1000
        if ou_fit(x).half_life is None:
            undefined += 1
    assert undefined >= 95


def test_ou_fit_consistency_with_sample_size():
    phi = math.exp(-math.log(2) / 7.85)
    small = [ou_fit(simulate_ou(phi, 0, 1, 500, seed=s)).phi for s in range(30)]
    large = [ou_fit(simulate_ou(phi, 0, 1, 5000, seed=s)).phi for s in range(30)]
    assert np.std(large) < np.std(small)
    assert abs(np.mean(large) - phi) < abs(np.mean(small) - phi) + 0.01


def test_ou_zscore_values():
    fit = OuFit(phi=0.9, mu=100.0, sigma_eps=1.0,
                half_life=math.log(2) / -math.log(0.9))
    sd = fit.stationary_std
    z = ou_zscore([100.0, 100.0 + sd, 100.0 - 2 * sd], fit)
    assert z[0] == pytest.approx(0.0)
    assert z[1] == pytest.approx(1.0)
    assert z[2] == pytest.approx(-2.0)


def test_ou_zscore_brute_force():
    phi = 0.8
    x = simulate_ou(phi, 50.0, 2.0, 200, seed=3)
    fit = ou_fit(x)
    z = ou_zscore(x, fit)
    sd = fit.sigma_eps / math.sqrt(1 - fit.phi ** 2)
    for i in range(200):
        assert z[i] == pytest.approx((x[i] - fit.mu) / sd, abs=1e-12)


def test_ou_zscore_requires_defined_half_life():
    fit = OuFit(phi=1.01, mu=0.0, sigma_eps=1.0, half_life=None)
    with pytest.raises(FeatureError):
        ou_zscore([1.0, 2.0], fit)


# -- GMM regimes --------------------------------------------------------------

def planted_clusters(seed=0, n_per=400):
    rng = np.random.default_rng(seed)
    means = np.array([[-5.0, 1.0, -1.0], [0.0, 4.0, 2.0], [5.0, 1.0, -1.0]])
    X = np.vstack([rng.normal(m, 0.4, size=(n_per, 3)) for m in means])
    y = np.repeat([0, 1, 2], n_per)
    perm = rng.permutation(len(X))
    return X[perm], y[perm]


def test_gmm_planted_cluster_accuracy():
    X, y = planted_clusters()
    model = gmm_fit(X, seed=0)
    acc = float(np.mean(regime_labels(model, X) == y))
    assert acc >= 0.95


def test_gmm_label_order_by_mean_return():
    X, _ = planted_clusters(seed=2)
    model = gmm_fit(X, seed=2)
    assert model.means_[0, 0] < model.means_[1, 0] < model.means_[2, 0]


def test_gmm_same_seed_bit_identical():
    X, _ = planted_clusters(seed=4)
    m1 = gmm_fit(X, seed=9)
    m2 = gmm_fit(X, seed=9)
    assert np.array_equal(m1.means_, m2.means_)
    assert np.array_equal(m1.variances_, m2.variances_)
    assert np.array_equal(m1.weights_, m2.weights_)


def test_gmm_identical_points_degenerate():
    X = np.ones((200, 3))
    with pytest.raises((GmmDegenerateError, FeatureError)):
        gmm_fit(X, seed=0)


def test_gmm_loglik_nondecreasing():
    X, _ = planted_clusters(seed=6)
    model = gmm_fit(X, seed=6)
    hist = np.array(model.loglik_history_)
    assert np.all(np.diff(hist) >= -1e-7)


def test_gmm_predict_at_component_mean():
    X, _ = planted_clusters(seed=1)
    model = gmm_fit(X, seed=1)
    raw_means = model.means_ * model.scale_std_ + model.scale_mean_
    labels = model.predict(raw_means)
    assert list(labels) == [0, 1, 2]


def test_gmm_posterior_brute_force():
    X, _ = planted_clusters(seed=8, n_per=334)
    model = gmm_fit(X, seed=8)
    Z = (X[:1000] - model.scale_mean_) / model.scale_std_
    probs = model.predict_proba(X[:1000])
    for i in range(0, 1000, 97):
        dens = []
        for j in range(3):
            d = Z[i] - model.means_[j]
            var = model.variances_[j]
            logp = (math.log(model.weights_[j])
                    - 0.5 * np.sum(np.log(2 * np.pi * var))
                    - 0.5 * np.sum(d * d / var))
            dens.append(math.exp(logp))
        dens = np.array(dens)
        assert np.allclose(probs[i], dens / dens.sum(), atol=1e-10)


def test_gmm_tie_breaks_to_lower_index():
    lab = np.argmax(np.array([[0.4, 0.4, 0.2]]), axis=1)
    assert lab[0] == 0  # argmax convention the predictor relies on


def test_gmm_needs_enough_observations():
    with pytest.raises(FeatureError):
        gmm_fit(np.zeros((100, 3)), seed=0)


# -- Markov transition probabilities -------------------------------------------

def test_markov_constant_labels():
    lab = [1] * 60
    p_same = markov_transition_prob(lab, window=20, frm=1, to=1)
    p_move = markov_transition_prob(lab, window=20, frm=1, to=2)
    assert np.allclose(p_same[20:], 1.0)
    assert np.allclose(p_move[20:], 0.0)


def test_markov_alternating_labels():
    lab = [0, 1] * 30
    p = markov_transition_prob(lab, window=20, frm=0, to=1)
    assert np.allclose(p[20:], 1.0)


def test_markov_absent_without_from_occurrences():
    lab = [2] * 40
    p = markov_transition_prob(lab, window=20, frm=1, to=2)
    assert np.all(np.isnan(p))


def test_markov_brute_force():
    rng = np.random.default_rng(17)
    lab = rng.integers(0, 3, size=300)
    window = 50
    p = markov_transition_prob(lab, window=window, frm=1, to=2)
    for i in range(300):
        if i < window:
            assert np.isnan(p[i])
            continue
        lo, hi = i - window, i - 1
        starts = hits = 0
        for j in range(lo, hi):
            if lab[j] == 1:
                starts += 1
                if lab[j + 1] == 2:
                    hits += 1
        if starts == 0:
            assert np.isnan(p[i])
        else:
            assert p[i] == pytest.approx(hits / starts, abs=1e-12)


def test_markov_window_validation():
    with pytest.raises(FeatureError):
        markov_transition_prob([0, 1, 2], window=5, frm=0, to=1)
