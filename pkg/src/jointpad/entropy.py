"""Channel complexity measures and the channel ranking built on them.

Fuzzy entropy follows the template-similarity construction used for EMG
signals: templates of length ``m`` are baseline-removed, compared by the
Chebyshev distance ``d``, and scored with the fuzzy membership
``exp(-d**n / r)``.  The entropy is ``ln(phi_m) - ln(phi_{m+1})``.
"""

from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .core import Session

Criterion = Literal["fuzzy", "sd", "jitter", "none"]
CRITERIA: tuple[str, ...] = ("fuzzy", "sd", "jitter", "none")


@dataclass(frozen=True)
class EntropyConfig:
    m: int = 2
    r: float = 0.25
    fuzzy_power: float = 2.0
    # scale r by the series' standard deviation instead of using it as an absolute tolerance
    r_times_sd: bool = False
    # use the series length as the membership exponent (literal reading; underflows for long series)
    power_is_length: bool = False

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.fuzzy_power <= 0:
            raise ValueError("fuzzy_power must be positive")


@dataclass(frozen=True)
class EntropyRanking:
    entropies: tuple[float, ...]
    order: tuple[int, ...]
    tag: str = "fuzzy"

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.entropies))):
            raise ValueError(f"order {self.order} is not a permutation")

    @property
    def top2(self) -> frozenset[int]:
        return frozenset(self.order[:2])


def _phi(x: np.ndarray, k: int, r: float, power: float) -> float:
    n = x.size - k + 1
    templates = np.lib.stride_tricks.sliding_window_view(x, k)
    templates = templates - templates.mean(axis=1, keepdims=True)
    d = np.zeros((n, n))
    for c in range(k):
        col = templates[:, c]
        np.maximum(d, np.abs(col[:, None] - col[None, :]), out=d)
    sim = np.exp(-np.power(d, power) / r)
    # diagonal entries are exp(0) == 1 and excluded from the average
    return float((sim.sum() - n) / (n * (n - 1)))


def fuzzy_entropy(series: Sequence[float], cfg: EntropyConfig = EntropyConfig()) -> float:
    x = np.asarray(series, dtype=float).ravel()
    if x.size < cfg.m + 2:
        raise ValueError(f"series of length {x.size} too short for m={cfg.m}")
    sd = x.std()
    if sd == 0:
        return 0.0
    r = cfg.r * sd if cfg.r_times_sd else cfg.r
    power = float(x.size) if cfg.power_is_length else cfg.fuzzy_power
    phi_m = _phi(x, cfg.m, r, power)
    phi_m1 = _phi(x, cfg.m + 1, r, power)
    if phi_m1 == 0.0:
        # no template pair is similar at this tolerance (e.g. unnormalised input): maximally irregular
        return math.inf
    return float(math.log(phi_m) - math.log(phi_m1))


def sd_criterion(series: Sequence[float]) -> float:
    x = np.asarray(series, dtype=float)
    if x.size < 1:
        raise ValueError("empty series")
    return float(x.std())


def jitter_criterion(series: Sequence[float], dt: float = 0.02) -> float:
    """RMS third finite difference divided by ``dt**3``."""
    x = np.asarray(series, dtype=float)
    if x.size < 4:
        raise ValueError("jitter needs at least 4 samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    d3 = np.diff(x, n=3) / dt**3
    return float(np.sqrt(np.mean(d3 * d3)))


def channel_scores(
    readings: np.ndarray,
    criterion: str = "fuzzy",
    cfg: EntropyConfig = EntropyConfig(),
    dt: float = 0.02,
) -> np.ndarray:
    readings = np.asarray(readings, dtype=float)
    n_ch = readings.shape[1]
    if criterion == "fuzzy":
        return np.array([fuzzy_entropy(readings[:, c], cfg) for c in range(n_ch)])
    if criterion == "sd":
        return np.array([sd_criterion(readings[:, c]) for c in range(n_ch)])
    if criterion == "jitter":
        return np.array([jitter_criterion(readings[:, c], dt) for c in range(n_ch)])
    if criterion == "none":
        return np.zeros(n_ch)
    raise ValueError(f"unknown ranking criterion {criterion!r}")


def ranking_from_scores(
    scores: Sequence[float], tag: str = "fuzzy", descending: bool = False
) -> EntropyRanking:
    scores = [float(s) for s in scores]
    idx = range(len(scores))
    if tag == "none":
        order = list(idx)
    elif descending:
        order = sorted(idx, key=lambda i: (-scores[i], i))
    else:
        order = sorted(idx, key=lambda i: (scores[i], i))
    return EntropyRanking(tuple(scores), tuple(order), tag)


def rank_readings(
    readings: np.ndarray,
    criterion: str = "fuzzy",
    cfg: EntropyConfig = EntropyConfig(),
    dt: float = 0.02,
    descending: bool = False,
) -> tuple[np.ndarray, EntropyRanking]:
    scores = channel_scores(readings, criterion, cfg, dt)
    ranking = ranking_from_scores(scores, criterion, descending)
    return np.asarray(readings)[:, list(ranking.order)], ranking


def rank_channels(
    session: Session,
    criterion: str = "fuzzy",
    cfg: EntropyConfig = EntropyConfig(),
    descending: bool = False,
) -> tuple[Session, EntropyRanking]:
    """Reorder channels so that output channel ``i`` is input channel ``order[i]``.

    The ranking is computed once over the whole session.  Ties keep the lower
    original index first.  ``descending`` flips the order for the sd/jitter
    criteria.
    """
    ranked, ranking = rank_readings(
        session.readings, criterion, cfg, dt=1.0 / session.rate_hz, descending=descending
    )
    return session.with_readings(ranked), ranking
