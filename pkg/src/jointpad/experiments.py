"""Desk-scale experiments on simulated data.

``source_run`` trains one model on a 3 x 8 placement grid and scores it on
seen placements, unseen placements and against a predict-the-mean baseline.
``transfer_run`` builds a new user, calibrates the model on 2000 unlabelled
frames from one placement and scores it on that user's other placements.
``criterion_table`` repeats both for every channel-ranking criterion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import lstm, sim
from .core import Dataset, partition
from .entropy import CRITERIA
from .evaluation import mae
from .pipeline import PrepConfig, Prepared, calibrate, prepare, train_source
from .transfer import TransferConfig


@dataclass(frozen=True)
class DeskSetup:
    seed: int = 0
    d_eta: float = 4.0
    d_beta: float = 45.0
    duration: float = 16.0
    # 14 train + 2 validate = 16 seen placements, 8 unseen
    fractions: tuple[float, float, float] = (14 / 24, 2 / 24, 8 / 24)
    epochs: int = 15
    stride: int = 2
    hidden: int = 32
    layers: int = 2
    # new user: per-channel gains/baselines redrawn and noisier sensors
    new_user_noise: float = 12.0
    target_frames: int = 2000
    transfer: TransferConfig = field(default_factory=TransferConfig)

    def prep(self, criterion: str) -> PrepConfig:
        return PrepConfig(criterion=criterion, stride=self.stride)

    def model(self) -> lstm.ModelConfig:
        return lstm.ModelConfig(layers=self.layers, hidden=self.hidden, epochs=self.epochs, seed=self.seed)


@dataclass
class SourceResult:
    criterion: str
    params: lstm.ModelParams
    config: lstm.ModelConfig
    dataset: Dataset
    seen_mae: float
    test_mae: float
    baseline_mae: float
    seconds: float


@dataclass
class TransferResult:
    criterion: str
    frozen_mae: float
    finetune_mae: float | None
    transfer_mae: float
    selected: int
    seconds: float


def _series_mae(params: lstm.ModelParams, prepared: Sequence[Prepared], W: int) -> float:
    errs = [np.abs(lstm.predict_series(params, p.readings, W)[W - 1 :] - p.truth[W - 1 :]) for p in prepared]
    return float(np.concatenate(errs).mean())


def desk_dataset(setup: DeskSetup) -> Dataset:
    data = sim.simulate(sim.SimConfig(setup.d_eta, setup.d_beta, duration=setup.duration, seed=setup.seed))
    return partition(data, setup.fractions, setup.seed)


def source_run(setup: DeskSetup, criterion: str = "fuzzy", data: Dataset | None = None) -> SourceResult:
    start = time.perf_counter()
    data = data if data is not None else desk_dataset(setup)
    prep = setup.prep(criterion)
    params, _, mcfg = train_source(data, prep, setup.model())
    W = mcfg.window
    seen = [prepare(s, prep) for s in data.sessions_in("train", "validate")]
    test = [prepare(s, prep) for s in data.sessions_in("test")]
    mean_angle = float(np.mean(np.concatenate([s.truth for s in data.sessions_in("train")])))
    truth = np.concatenate([p.truth[W - 1 :] for p in test])
    return SourceResult(
        criterion,
        params,
        mcfg,
        data,
        seen_mae=_series_mae(params, seen, W),
        test_mae=_series_mae(params, test, W),
        baseline_mae=mae(np.full(truth.size, mean_angle), truth),
        seconds=time.perf_counter() - start,
    )


def new_user(setup: DeskSetup) -> sim.UserProfile:
    return sim.random_profile(sim.derive_seed(setup.seed, "new-user") % 2**31, noise_scale=setup.new_user_noise)


def transfer_run(setup: DeskSetup, source: SourceResult, finetune: bool = False) -> TransferResult:
    """Calibrate ``source`` to a new user; scores are on the user's other placements."""
    start = time.perf_counter()
    profile = new_user(setup)
    grid = sim.placement_grid(setup.d_eta, setup.d_beta)
    rng = np.random.default_rng(sim.derive_seed(setup.seed, "target-placement"))
    target_at = grid[int(rng.integers(len(grid)))]
    bend = sim.TEMPLATES["bend"]
    seconds = setup.target_frames / sim.DEFAULT_RATE
    target = sim.gen_session(target_at, bend, profile, "new", seconds, sim.derive_seed(setup.seed, "target"))
    prep = setup.prep(source.criterion)
    held_out = [
        prepare(sim.gen_session(p, bend, profile, "new", setup.duration, sim.derive_seed(setup.seed, "eval")), prep)
        for p in grid
        if p != target_at
    ]
    pool = [prepare(s, prep) for s in source.dataset.sessions_in("train", "validate")]
    tcfg = replace(setup.transfer, seed=setup.seed, budget=setup.target_frames)
    W = source.config.window
    adapted, rep = calibrate(source.params, source.config, pool, [target], prep, tcfg)
    tuned = None
    if finetune:
        plain, _ = calibrate(source.params, source.config, pool, [target], prep, tcfg, use_mmd=False)
        tuned = _series_mae(plain, held_out, W)
    return TransferResult(
        source.criterion,
        frozen_mae=_series_mae(source.params, held_out, W),
        finetune_mae=tuned,
        transfer_mae=_series_mae(adapted, held_out, W),
        selected=len(rep.selected),
        seconds=time.perf_counter() - start,
    )


def criterion_table(
    setup: DeskSetup,
    criteria: Sequence[str] = ("none", "jitter", "sd", "fuzzy"),
    cached: dict[str, tuple[SourceResult, TransferResult]] | None = None,
) -> list[dict]:
    """One row per ranking criterion: source test MAE and new-user MAE before/after transfer."""
    cached = dict(cached or {})
    data = desk_dataset(setup)
    rows = []
    for c in criteria:
        if c not in CRITERIA:
            raise ValueError(f"unknown criterion {c!r}")
        if c not in cached:
            src = source_run(setup, c, data)
            cached[c] = (src, transfer_run(setup, src))
        src, tr = cached[c]
        rows.append(
            {
                "criterion": c,
                "test_mae": src.test_mae,
                "new_user_frozen": tr.frozen_mae,
                "new_user_transfer": tr.transfer_mae,
            }
        )
    return rows
