"""Glue between the stages: session preparation, window sets, source training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import lstm
from .core import Dataset, Placement, Session, normalize_minmax, remove_outliers, window_array
from .entropy import EntropyConfig, EntropyRanking, rank_channels
from .evaluation import ErrorReport, Record, error_report
from .smooth import KalmanConfig, smooth_series
from .transfer import EmptySelection, TransferConfig, TransferReport, select_source, transfer_fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrepConfig:
    z: float = 3.0
    criterion: str = "fuzzy"
    descending: bool = False
    # active sensor subset (original indices); None keeps all six
    channels: tuple[int, ...] | None = None
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    window: int = 30
    # training-window stride; evaluation always uses stride 1
    stride: int = 1


@dataclass
class Prepared:
    session: Session
    readings: np.ndarray
    ranking: EntropyRanking

    @property
    def placement(self) -> Placement:
        return self.session.placement

    @property
    def truth(self) -> np.ndarray | None:
        return self.session.truth


def sensor_subset(n: int, total: int = 6) -> tuple[int, ...]:
    """``n`` channels spread evenly around the pad."""
    if not 1 <= n <= total:
        raise ValueError(f"sensor count must lie in [1, {total}]")
    return tuple(int(i) for i in np.floor(np.arange(n) * total / n))


def prepare(session: Session, cfg: PrepConfig = PrepConfig()) -> Prepared:
    """Channel subset -> outlier repair -> max-min scaling -> channel ranking."""
    s = session
    if cfg.channels is not None:
        s = s.with_readings(s.readings[:, list(cfg.channels)])
    s = remove_outliers(s, cfg.z)
    s, _ = normalize_minmax(s)
    ranked, ranking = rank_channels(s, cfg.criterion, cfg.entropy, cfg.descending)
    return Prepared(session, np.array(ranked.readings), ranking)


def prepare_all(sessions: Sequence[Session], cfg: PrepConfig = PrepConfig()) -> list[Prepared]:
    return [prepare(s, cfg) for s in sessions]


def window_set(
    prepared: Sequence[Prepared], W: int, stride: int = 1, labelled: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    xs, ys = [], []
    for p in prepared:
        X = window_array(p.readings, W)[::stride]
        if len(X) == 0:
            continue
        xs.append(X)
        if labelled:
            if p.truth is None:
                raise ValueError(f"session at {p.placement} has no ground truth")
            ys.append(p.truth[W - 1 :][::stride])
    if not xs:
        raise ValueError("no windows: every session is shorter than the window")
    X = np.ascontiguousarray(np.concatenate(xs))
    return X, (np.concatenate(ys) if labelled else None)


def model_config_for(prep: PrepConfig, base: lstm.ModelConfig) -> lstm.ModelConfig:
    n_ch = len(prep.channels) if prep.channels is not None else 6
    return replace(base, channels=n_ch, window=prep.window)


def train_source(
    dataset: Dataset,
    prep: PrepConfig,
    model: lstm.ModelConfig,
) -> tuple[lstm.ModelParams, lstm.TrainReport, lstm.ModelConfig]:
    """Train on the ``train`` split with ``validate`` for model selection."""
    cfg = model_config_for(prep, model)
    tr = [prepare(s, prep) for s in dataset.sessions_in("train")]
    va = [prepare(s, prep) for s in dataset.sessions_in("validate")]
    if not tr or not va:
        raise ValueError("dataset needs nonempty train and validate splits")
    train = window_set(tr, cfg.window, prep.stride)
    val = window_set(va, cfg.window, prep.stride)
    params = lstm.init(cfg)
    params, report = lstm.fit(params, train, val, cfg)
    return params, report, cfg


def head(session: Session, frames: int) -> Session:
    """The first ``frames`` frames of a session."""
    if frames <= 0:
        raise ValueError("frame budget must be positive")
    if len(session) <= frames:
        return session
    truth = None if session.truth is None else session.truth[:frames]
    return replace(
        session,
        timestamps=session.timestamps[:frames],
        readings=session.readings[:frames],
        truth=truth,
    )


def predict_prepared(
    params: lstm.ModelParams, prepared: Prepared, window: int, smooth: KalmanConfig | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Raw per-frame estimates and, if requested, their Kalman-smoothed version."""
    raw = lstm.predict_series(params, prepared.readings, window)
    return raw, (smooth_series(raw, smooth) if smooth is not None else None)


def report(
    params: lstm.ModelParams,
    sessions: Sequence[Session],
    prep: PrepConfig,
    window: int,
    smooth: KalmanConfig | None = None,
    velocity_window: int = 2,
) -> ErrorReport:
    """Binned error report of a model over labelled sessions, in session order."""
    if not sessions:
        raise ValueError("cannot report on an empty split")
    records = []
    for s in sessions:
        if s.truth is None:
            raise ValueError(f"session at {s.placement} has no ground truth")
        raw, smoothed = predict_prepared(params, prepare(s, prep), window, smooth)
        pred = smoothed if smoothed is not None else raw
        records.append(Record(s.placement, pred, s.truth, s.rate_hz))
    return error_report(records, velocity_window)


def calibrate(
    params: lstm.ModelParams,
    model: lstm.ModelConfig,
    source: Sequence[Prepared],
    target: Sequence[Session],
    prep: PrepConfig,
    config: TransferConfig = TransferConfig(),
    use_mmd: bool = True,
    select: bool = True,
) -> tuple[lstm.ModelParams, TransferReport]:
    """Adapt ``params`` to unlabelled target sessions.

    Target sessions are cut to the frame budget (shared across them) before
    any preprocessing, and their labels are never read.  With ``select`` the
    labelled source pool keeps only placements whose top-2 channels overlap
    those of the first target session; an empty match falls back to every
    source placement.
    """
    if not target:
        raise ValueError("no target sessions")
    remaining = config.budget
    tgt = []
    for t in target:
        if remaining <= 0:
            break
        cut = head(t, remaining)
        remaining -= len(cut)
        tgt.append(prepare(cut, prep))
    chosen = sorted({p.placement for p in source})
    if select:
        try:
            chosen = select_source([(p.placement, p.ranking) for p in source], tgt[0].ranking)
        except EmptySelection:
            logger.warning("no source placement matches the target ranking; using all of them")
    keep = set(chosen)
    pool = [p for p in source if p.placement in keep]
    Xs, ys = window_set(pool, model.window, prep.stride)
    Xt, _ = window_set(tgt, model.window, 1, labelled=False)
    new, rep = transfer_fit(params, (Xs, ys), Xt, config, use_mmd=use_mmd)
    rep.selected = chosen
    return new, rep
