"""Constant-velocity Kalman smoothing of per-frame angle estimates.

State is (angle, angular velocity).  The network output is the measurement.
``ratio`` fixes the steady-state ratio of the a-priori (predicted) angle
variance to the measurement variance: large ratios trust the network output,
small ratios lean on the motion model.  The process-noise intensity that
realises a given ratio is found once per (ratio, dt) from the discrete
algebraic Riccati equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_discrete_are
from scipy.optimize import brentq


def _prior_angle_var(log_q: float, dt: float, r: float) -> float:
    q = math.exp(log_q)
    F = np.array([[1.0, dt], [0.0, 1.0]])
    H = np.array([[1.0], [0.0]])
    Q = q * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    P = solve_discrete_are(F.T, H, Q, np.array([[r]]))
    return float(P[0, 0])


@lru_cache(maxsize=64)
def process_intensity(ratio: float, dt: float, r: float = 1.0) -> float:
    """White-acceleration intensity ``q`` with steady-state ``P_prior[0,0] / r == ratio``."""
    target = r * ratio
    lo, hi = -60.0, 60.0
    f = lambda lq: math.log(_prior_angle_var(lq, dt, r)) - math.log(target)
    if f(lo) > 0:
        return math.exp(lo)
    if f(hi) < 0:
        return math.exp(hi)
    return math.exp(brentq(f, lo, hi, xtol=1e-12))


@dataclass(frozen=True)
class KalmanConfig:
    ratio: float = 2.67
    dt: float = 0.02
    # measurement variance in deg^2; scales both noise terms, not the gain
    noise_scale: float = 1.0
    init_var: float = 1.0e4
    q: tuple[float, float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.ratio <= 0 or self.dt <= 0 or self.noise_scale <= 0:
            raise ValueError("ratio, dt and noise_scale must be positive")
        qi = process_intensity(self.ratio, self.dt) * self.noise_scale
        dt = self.dt
        object.__setattr__(self, "q", (qi * dt**3 / 3.0, qi * dt**2 / 2.0, qi * dt))


@dataclass(frozen=True)
class KalmanState:
    angle: float
    velocity: float
    p00: float
    p01: float
    p11: float

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.p00, self.p01], [self.p01, self.p11]])


def initial_state(measurement: float, config: KalmanConfig = KalmanConfig()) -> KalmanState:
    return KalmanState(float(measurement), 0.0, config.init_var, 0.0, config.init_var)


def predict(state: KalmanState, config: KalmanConfig) -> KalmanState:
    dt = config.dt
    q00, q01, q11 = config.q
    p00 = state.p00 + 2.0 * dt * state.p01 + dt * dt * state.p11 + q00
    p01 = state.p01 + dt * state.p11 + q01
    p11 = state.p11 + q11
    return KalmanState(state.angle + dt * state.velocity, state.velocity, p00, p01, p11)


def step(state: KalmanState, measurement: float, config: KalmanConfig = KalmanConfig()) -> KalmanState:
    """Predict with the constant-velocity model, then update with one measurement."""
    z = float(measurement)
    if not math.isfinite(z):
        raise ValueError(f"non-finite measurement {measurement!r}")
    dt = config.dt
    q00, q01, q11 = config.q
    a = state.angle + dt * state.velocity
    p00 = state.p00 + 2.0 * dt * state.p01 + dt * dt * state.p11 + q00
    p01 = state.p01 + dt * state.p11 + q01
    p11 = state.p11 + q11
    s = p00 + config.noise_scale
    k0 = p00 / s
    k1 = p01 / s
    innov = z - a
    return KalmanState(
        a + k0 * innov,
        state.velocity + k1 * innov,
        (1.0 - k0) * p00,
        (1.0 - k0) * p01,
        p11 - k1 * p01,
    )


def smooth_series(estimates, config: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """Filter a stream of estimates; NaN entries are treated as missing.

    Leading NaNs stay NaN.  A NaN after the first finite value yields the
    model prediction for that frame.
    """
    z = np.asarray(estimates, dtype=float).ravel()
    out = np.full(z.size, np.nan)
    state: KalmanState | None = None
    for i, v in enumerate(z.tolist()):
        if state is None:
            if math.isfinite(v):
                state = initial_state(v, config)
                out[i] = v
            continue
        state = step(state, v, config) if math.isfinite(v) else predict(state, config)
        out[i] = state.angle
    return out
