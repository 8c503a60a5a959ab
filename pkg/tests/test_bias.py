import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wheelodo.bias import (
    BiasKfConfig,
    bias_kf_step,
    estimate_bias,
    init_bias_state,
    remove_bias,
    stationary_samples,
)
from wheelodo.sim import GyroNoiseSpec, simulate_stationary
from wheelodo.types import GyroSample

BIAS = np.array([0.01, -0.02, 0.005])


def stationary(seed, n=6000, sigma=0.002, bias=BIAS):
    rng = np.random.default_rng(seed)
    return bias + sigma * rng.standard_normal((n, 3))


def test_noiseless_window_is_exact():
    est = estimate_bias(np.tile(BIAS, (500, 1)))
    np.testing.assert_allclose(est.b, BIAS, atol=1e-15)


def test_noiseless_with_configured_noise():
    cfg = BiasKfConfig(noise_cov=4e-6 * np.eye(3))
    est = estimate_bias(np.tile(BIAS, (500, 1)), cfg)
    np.testing.assert_allclose(est.b, BIAS, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_recovers_bias_near_sample_mean(seed):
    w = stationary(seed)
    est = estimate_bias(w)
    se = 0.002 / np.sqrt(len(w))
    assert np.all(np.abs(est.b - BIAS) < 4 * se)
    assert np.all(np.abs(est.b - w.mean(axis=0)) < 2 * se)
    assert est.stationary_consistent
    assert est.n_skipped == 0


def test_posterior_covariance_is_spd():
    est = estimate_bias(stationary(1))
    assert np.allclose(est.sigma, est.sigma.T)
    assert np.linalg.eigvalsh(est.sigma).min() > 0
    # shrinks from the prior
    assert np.all(est.std < 1e-2)


def test_moving_window_flagged(caplog):
    w = stationary(2)
    w[:, 2] += np.linspace(0, 3, len(w))
    with caplog.at_level(logging.WARNING):
        est = estimate_bias(w)
    assert not est.stationary_consistent
    assert "non-stationary" in caplog.text


def test_step_api_matches_batch():
    w = stationary(3, n=300)
    cfg = BiasKfConfig()
    state = init_bias_state(w, cfg)
    for k, g in enumerate(w):
        state = bias_kf_step(state, GyroSample(k * 0.01, g), cfg)
    est = estimate_bias(w, cfg)
    np.testing.assert_allclose(state.b, est.b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(state.sigma, est.sigma, rtol=1e-12)
    assert state.n_updates == 300


def test_degenerate_step_is_skipped():
    cfg = BiasKfConfig(noise_cov=np.zeros((3, 3)))
    state = init_bias_state(np.tile(BIAS, (10, 1)), cfg)
    # sample equal to the estimate: zero Jacobian and zero noise
    nxt = bias_kf_step(state, GyroSample(0.0, state.b), cfg)
    assert nxt.n_skipped == 1
    np.testing.assert_array_equal(nxt.b, state.b)


def test_rejects_non_finite_and_empty():
    w = stationary(4, n=200)
    w[10, 1] = np.nan
    with pytest.raises(ValueError):
        estimate_bias(w)
    with pytest.raises(ValueError):
        estimate_bias(np.empty((0, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        BiasKfConfig(sigma0=-np.eye(3))
    with pytest.raises(ValueError):
        BiasKfConfig(q_bias=np.ones((2, 2)))
    assert np.allclose(BiasKfConfig(sigma0=2.0).sigma0, 2.0 * np.eye(3))


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3))
def test_remove_bias_idempotent_for_zero(b):
    w = stationary(5, n=20)
    once = remove_bias(w, b)
    np.testing.assert_allclose(once, w - np.asarray(b))
    np.testing.assert_array_equal(remove_bias(once, np.zeros(3)), once)


def test_remove_bias_on_samples():
    samples = [GyroSample(0.1 * k, BIAS + k) for k in range(5)]
    out = remove_bias(samples, BIAS)
    np.testing.assert_allclose(stationary_samples(out)[:, 0], np.arange(5.0))
    assert [s.t for s in out] == [s.t for s in samples]


def test_simulated_stationary_log():
    log = simulate_stationary(60.0, 100.0, GyroNoiseSpec(seed=9))
    est = estimate_bias(log.omega)
    assert len(log.t) == 6000
    assert np.all(np.abs(est.b - BIAS) < 3 * 0.002 / np.sqrt(6000) * 1.5)


def test_posterior_consistency_monte_carlo():
    hits = 0
    for seed in range(100):
        est = estimate_bias(stationary(seed))
        hits += bool(np.all(np.abs(est.b - BIAS) <= 3 * est.std))
    assert hits >= 99


def test_invariant_to_time_shift():
    from wheelodo.cli import calibrate
    from wheelodo.config import RunConfig

    omega = stationary(4)
    t = np.arange(len(omega)) * 0.01
    a = calibrate(t, omega, RunConfig(), (0.0, 60.0))[0].b
    b = calibrate(t + 1234.5, omega, RunConfig(), (1234.5, 1294.5))[0].b
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
