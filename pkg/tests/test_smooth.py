import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from jointpad.smooth import KalmanConfig, initial_state, process_intensity, smooth_series, step


def _ramp(seed, n=1000, slope=30.0, sd=2.0, dt=0.02):
    t = np.arange(n) * dt
    truth = 40.0 + slope * t
    return t, truth, truth + np.random.default_rng(seed).normal(0, sd, n)


def _rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _jitter(x):
    return float(np.sqrt(np.mean(np.diff(x, 3) ** 2)))


def test_ratio_is_prior_over_measurement_variance():
    cfg = KalmanConfig()
    q = process_intensity(cfg.ratio, cfg.dt)
    dt = cfg.dt
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    P = solve_discrete_are(F.T, np.array([[1.0], [0.0]]), Q, np.array([[1.0]]))
    assert P[0, 0] / 1.0 == pytest.approx(2.67, rel=1e-9)


def test_constant_input_fixed_point():
    state = initial_state(90.0)
    for _ in range(500):
        prev = state
        state = step(state, 90.0)
    assert state.angle == pytest.approx(90.0, abs=1e-9)
    assert abs(90.0 - (prev.angle + 0.02 * prev.velocity)) < 1e-9


def test_trust_measurement_limit_follows_raw():
    _, _, z = _ramp(0)
    out = smooth_series(z, KalmanConfig(ratio=1e6))
    np.testing.assert_allclose(out, z, atol=1e-2)


def test_trust_model_limit_is_smooth():
    _, truth, z = _ramp(0)
    out = smooth_series(z, KalmanConfig(ratio=1e-3))
    assert _jitter(out[200:]) < 0.05 * _jitter(z[200:])


def test_noisy_ramp_error_and_slope():
    t, truth, z = _ramp(3)
    out = smooth_series(z)
    assert _rms(out[100:], truth[100:]) < _rms(z[100:], truth[100:])
    slope = np.polyfit(t[100:], out[100:], 1)[0]
    assert slope == pytest.approx(30.0, rel=0.05)


def test_jitter_reduced_most_seeds():
    wins = sum(_jitter(smooth_series(z)) < _jitter(z) for z in (_ramp(s)[2] for s in range(10)))
    assert wins >= 9


@given(st.lists(st.floats(0, 180), min_size=1, max_size=60), st.floats(0.05, 50))
@settings(max_examples=50, deadline=None)
def test_covariance_stays_psd(values, ratio):
    cfg = KalmanConfig(ratio=ratio)
    state = initial_state(values[0], cfg)
    for v in values[1:]:
        state = step(state, v, cfg)
        P = state.covariance
        assert P[0, 1] == P[1, 0]
        assert np.linalg.eigvalsh(P).min() >= -1e-9


def test_missing_and_bad_input():
    out = smooth_series([np.nan, np.nan, 10.0, np.nan, 12.0])
    assert np.isnan(out[:2]).all() and np.isfinite(out[2:]).all()
    assert len(out) == 5
    with pytest.raises(ValueError):
        step(initial_state(0.0), math.inf)
    with pytest.raises(ValueError):
        KalmanConfig(ratio=0)


def test_step_latency():
    cfg = KalmanConfig()
    state = initial_state(0.0, cfg)
    z = np.random.default_rng(0).normal(90, 2, 20000).tolist()
    start = time.perf_counter()
    for v in z:
        state = step(state, v, cfg)
    per_step = (time.perf_counter() - start) / len(z)
    assert per_step < 1e-4
