"""Synthetic elbow trajectories and six-channel stretch-sensor responses.

The sensor model is a stand-in for real recordings.  It reproduces the
qualitative picture of a stretch-sensor pad: channels facing the olecranon
stretch almost linearly with flexion, channels facing the elbow crease mostly
carry a nonlinear, one-to-many component plus noise.  All constants live in
the dataclasses below.

Motion templates other than ``bend`` (ranges and cycle rates) are invented;
only their diversity matters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ETA_LIMIT,
    N_CHANNELS,
    RAW_MAX,
    Dataset,
    Placement,
    Session,
)

DEFAULT_RATE = 50.0
LATERAL_SLOPE = 0.1  # S_lat(4 cm) == 0.6
THETA_STRAIGHT = 180.0
THETA_SPAN = 140.0
# incommensurate angular frequencies of the crease-side term (rad per rad of flexion)
CHAOS_FREQS = (23.0, 23.0 * np.sqrt(2.0))
CHAOS_TIME_FREQ = 0.37  # Hz


@dataclass(frozen=True)
class SensorLayout:
    positions: tuple[float, ...] = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)
    olecranon: float = 180.0

    def __post_init__(self):
        mod = [round(p % 360.0, 9) for p in self.positions]
        if len(set(mod)) != len(mod):
            raise ValueError("sensor positions must be distinct modulo 360")


@dataclass(frozen=True)
class UserProfile:
    gains: tuple[float, ...] = (400.0,) * N_CHANNELS
    baselines: tuple[float, ...] = (300.0,) * N_CHANNELS
    girth: float = 24.75
    noise_scale: float = 4.0
    chaos_scale: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if any(g <= 0 for g in self.gains):
            raise ValueError("gains must be positive")
        if any(b < 0 or b > RAW_MAX for b in self.baselines):
            raise ValueError("baselines must lie in [0, 1023]")
        if not 20.5 <= self.girth <= 28.0:
            raise ValueError("arm girth must lie in [20.5, 28] cm")
        if self.noise_scale < 0 or self.chaos_scale < 0:
            raise ValueError("noise and chaos scales must be non-negative")

    def phases(self) -> np.ndarray:
        """Per-channel phases (3 per channel) of the crease-side term, fixed by ``seed``."""
        rng = np.random.default_rng([self.seed, 7919])
        return rng.uniform(0.0, 2.0 * np.pi, size=(len(self.gains), 3))


def random_profile(seed: int, **overrides) -> UserProfile:
    """Draw a plausible user: gains/baselines spread per channel, girth in range."""
    rng = np.random.default_rng([seed, 104729])
    prof = UserProfile(
        gains=tuple(float(g) for g in rng.uniform(320.0, 480.0, N_CHANNELS)),
        baselines=tuple(float(b) for b in rng.uniform(220.0, 380.0, N_CHANNELS)),
        girth=float(rng.uniform(20.5, 28.0)),
        seed=seed,
    )
    return replace(prof, **overrides)


@dataclass(frozen=True)
class MotionTemplate:
    name: str
    theta_lo: float
    theta_hi: float
    frequency: float
    velocity_jitter: float = 0.3

    def __post_init__(self):
        if not 40.0 <= self.theta_lo < self.theta_hi <= 180.0:
            raise ValueError("template range must satisfy 40 <= lo < hi <= 180")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if not 0 <= self.velocity_jitter < 1:
            raise ValueError("velocity_jitter must lie in [0, 1)")


TEMPLATES: dict[str, MotionTemplate] = {
    "bend": MotionTemplate("bend", 40.0, 180.0, 0.5, 0.3),
    "walk": MotionTemplate("walk", 90.0, 160.0, 1.0, 0.15),
    "run": MotionTemplate("run", 70.0, 160.0, 2.0, 0.15),
    "jump": MotionTemplate("jump", 60.0, 170.0, 1.5, 0.2),
    "clap": MotionTemplate("clap", 40.0, 140.0, 2.5, 0.2),
}


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary labels, independent of hash randomisation."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def gen_trajectory(
    template: MotionTemplate, duration: float, rate: float = DEFAULT_RATE, seed: int = 0
) -> np.ndarray:
    """Quasi-periodic flexion angle in degrees, starting from the extended pose.

    Each cycle runs at ``frequency * (1 + jitter * u)`` with ``u ~ U(-1, 1)``.
    Cycle boundaries fall on the extended pose where the angular velocity is
    zero, so the series is C1 despite the per-cycle rate changes.
    """
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and rate must be positive")
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(seed)
    n_cycles = int(np.ceil(duration * template.frequency * 2.0)) + 2
    freqs = template.frequency * (
        1.0 + template.velocity_jitter * rng.uniform(-1.0, 1.0, n_cycles)
    )
    ends = np.cumsum(1.0 / freqs)
    cycle = np.searchsorted(ends, t, side="right")
    starts = np.concatenate([[0.0], ends[:-1]])
    frac = (t - starts[cycle]) * freqs[cycle]
    mid = 0.5 * (template.theta_lo + template.theta_hi)
    half = 0.5 * (template.theta_hi - template.theta_lo)
    theta = mid + half * np.cos(2.0 * np.pi * frac)
    return np.clip(theta, template.theta_lo, template.theta_hi)


def stretch_weights(placement: Placement, layout: SensorLayout = SensorLayout()) -> np.ndarray:
    phi = (np.asarray(layout.positions) + placement.beta) % 360.0
    return np.maximum(0.0, np.cos(np.deg2rad(phi - layout.olecranon)))


def lateral_scale(eta: float) -> float:
    return 1.0 - LATERAL_SLOPE * abs(eta)


def chaos_term(theta: np.ndarray, t: np.ndarray, profile: UserProfile) -> np.ndarray:
    """Smooth but strongly nonlinear per-channel term, shape (n, channels)."""
    th = np.deg2rad(np.asarray(theta, dtype=float))[:, None]
    tt = np.asarray(t, dtype=float)[:, None]
    ph = profile.phases()
    f1, f2 = CHAOS_FREQS
    wave = np.sin(f1 * th + ph[:, 0]) + np.sin(
        f2 * th + ph[:, 1] + 2.0 * np.pi * CHAOS_TIME_FREQ * tt + ph[:, 2]
    )
    return profile.chaos_scale * 0.5 * wave


def sensor_response(
    theta,
    placement: Placement,
    layout: SensorLayout = SensorLayout(),
    profile: UserProfile = UserProfile(),
    t=0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Raw readings for flexion ``theta`` (deg) at time ``t`` (s).

    Returns shape (6,) for scalar input, else (n, 6).  Noise is added only
    when ``rng`` is given.
    """
    scalar = np.ndim(theta) == 0
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size and (theta.min() < 0 or theta.max() > 190):
        raise ValueError("theta must lie in [0, 190] degrees")
    t = np.broadcast_to(np.asarray(t, dtype=float), theta.shape)
    w = stretch_weights(placement, layout)
    gain = np.asarray(profile.gains)
    base = np.asarray(profile.baselines)
    flex = ((THETA_STRAIGHT - theta) / THETA_SPAN)[:, None]
    out = base + gain * w * flex * lateral_scale(placement.eta)
    out = out + (1.0 - w) * chaos_term(theta, t, profile)
    if rng is not None and profile.noise_scale > 0:
        out = out + rng.normal(0.0, profile.noise_scale, size=out.shape)
    out = np.clip(out, 0.0, RAW_MAX)
    return out[0] if scalar else out


def placement_grid(d_eta: float = 1.0, d_beta: float = 5.0) -> list[Placement]:
    """Lateral offsets from -4 to +4 cm by ``d_eta``; rotations over [0, 360) by ``d_beta``."""
    if d_eta <= 0 or d_beta <= 0:
        raise ValueError("grid steps must be positive")
    n_eta = int(np.floor(2 * ETA_LIMIT / d_eta + 1e-9)) + 1
    etas = [-ETA_LIMIT + i * d_eta for i in range(n_eta)]
    n_beta = int(np.ceil(360.0 / d_beta - 1e-9))
    betas = [i * d_beta for i in range(n_beta)]
    return [Placement(e, b) for b in betas for e in etas]


def gen_session(
    placement: Placement,
    template: MotionTemplate,
    profile: UserProfile,
    user_id: str,
    duration: float,
    seed: int,
    rate: float = DEFAULT_RATE,
    layout: SensorLayout = SensorLayout(),
) -> Session:
    # trajectory depends on placement and motion only, so two users at one
    # placement perform the same movement and differ through their profile
    traj_seed = derive_seed(seed, placement.eta, placement.beta, template.name)
    noise_seed = derive_seed(seed, placement.eta, placement.beta, template.name, profile)
    theta = gen_trajectory(template, duration, rate, traj_seed)
    t = np.arange(theta.size) / rate
    readings = sensor_response(
        theta, placement, layout, profile, t, rng=np.random.default_rng(noise_seed)
    )
    timestamps = np.round(t * 1000.0).astype(np.int64)
    return Session(
        placement=placement,
        timestamps=timestamps,
        readings=readings,
        truth=theta,
        user_id=user_id,
        motion_id=template.name,
        rate_hz=rate,
    )


@dataclass
class SimConfig:
    d_eta: float = 4.0
    d_beta: float = 45.0
    templates: tuple[str, ...] = ("bend",)
    users: int = 1
    duration: float = 16.0
    rate: float = DEFAULT_RATE
    seed: int = 0
    layout: SensorLayout = field(default_factory=SensorLayout)


def user_profiles(n_users: int, seed: int) -> dict[str, UserProfile]:
    """User ``u0`` is the reference profile; further users are randomised around it."""
    users = {"u0": UserProfile(seed=derive_seed(seed, "u0") % 2**31)}
    for k in range(1, n_users):
        users[f"u{k}"] = random_profile(derive_seed(seed, f"u{k}") % 2**31)
    return users


def gen_dataset(
    placements: Sequence[Placement],
    templates: Iterable[MotionTemplate],
    users: dict[str, UserProfile],
    duration: float,
    seed: int = 0,
    rate: float = DEFAULT_RATE,
    layout: SensorLayout = SensorLayout(),
) -> Dataset:
    """One labelled session per (placement, template, user)."""
    placements = list(placements)
    if not placements:
        raise ValueError("empty placement grid")
    templates = list(templates)
    sessions = [
        gen_session(p, tpl, prof, uid, duration, seed, rate, layout)
        for p in placements
        for tpl in templates
        for uid, prof in users.items()
    ]
    return Dataset(sessions)


def simulate(cfg: SimConfig, profiles: dict[str, UserProfile] | None = None) -> Dataset:
    profiles = profiles if profiles is not None else user_profiles(cfg.users, cfg.seed)
    return gen_dataset(
        placement_grid(cfg.d_eta, cfg.d_beta),
        [TEMPLATES[name] for name in cfg.templates],
        profiles,
        cfg.duration,
        cfg.seed,
        cfg.rate,
        cfg.layout,
    )
