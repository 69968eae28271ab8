"""Unsupervised calibration of a trained regressor to a new user or motion.

The model keeps a supervised MSE loss on labelled source windows and adds a
multi-kernel MMD penalty between the predicted angles of source and target
batches, weighted by ``eta_weight * lambda(i)`` where ``lambda`` ramps up
from 0 with the global step ``i``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import lstm
from .core import Placement
from .entropy import EntropyRanking

logger = logging.getLogger(__name__)


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class TransferConfig:
    eta_weight: float = 5_000_000.0
    schedule_m: float = 1.01e8
    bandwidth_multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    budget: int = 2000
    epoch_switch: int = 5
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    clip_norm: float = 5.0
    unbiased: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.eta_weight <= 0 or self.schedule_m <= 0 or self.budget <= 0:
            raise ValueError("eta_weight, schedule_m and budget must be positive")
        if not self.bandwidth_multipliers or min(self.bandwidth_multipliers) <= 0:
            raise ValueError("bandwidth multipliers must be positive")


# ---------------------------------------------------------------------------
# kernel two-sample loss


def _kernel(x: np.ndarray, y: np.ndarray, bandwidths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of Gaussian kernels and its derivative w.r.t. ``x``; both (len(x), len(y))."""
    diff = x[:, None] - y[None, :]
    sq = diff * diff
    k = np.zeros_like(sq)
    dk = np.zeros_like(sq)
    for s in bandwidths:
        e = np.exp(-sq / (2.0 * s * s))
        k += e
        dk -= e * diff / (s * s)
    n = len(bandwidths)
    return k / n, dk / n


def _check(a, b, bandwidths) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    bw = np.atleast_1d(np.asarray(bandwidths, dtype=float))
    if a.size < 2 or b.size < 2:
        raise ValueError("mmd needs at least two samples on each side")
    if bw.size == 0 or np.any(~(bw > 0)) or not np.all(np.isfinite(bw)):
        raise ValueError(f"degenerate kernel bandwidths {bw.tolist()}")
    return a, b, bw


def mmd_with_grad(a, b, bandwidths, unbiased: bool = False) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared MMD between 1-D samples plus its gradients w.r.t. every sample."""
    a, b, bw = _check(a, b, bandwidths)
    m, n = a.size, b.size
    kaa, daa = _kernel(a, a, bw)
    kbb, dbb = _kernel(b, b, bw)
    kab, dab = _kernel(a, b, bw)
    if unbiased:
        saa = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        sbb = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
        ca, cb = 2.0 / (m * (m - 1)), 2.0 / (n * (n - 1))
    else:
        saa = kaa.sum() / (m * m)
        sbb = kbb.sum() / (n * n)
        ca, cb = 2.0 / (m * m), 2.0 / (n * n)
    value = saa - 2.0 * kab.sum() / (m * n) + sbb
    # the kernel derivative vanishes on the diagonal, so the i == j terms need no special care
    grad_a = ca * daa.sum(axis=1) - 2.0 / (m * n) * dab.sum(axis=1)
    grad_b = cb * dbb.sum(axis=1) + 2.0 / (m * n) * dab.sum(axis=0)
    return float(value), grad_a, grad_b


def mmd(a, b, bandwidths, unbiased: bool = False) -> float:
    a, b, bw = _check(a, b, bandwidths)
    m, n = a.size, b.size
    kaa, _ = _kernel(a, a, bw)
    kbb, _ = _kernel(b, b, bw)
    kab, _ = _kernel(a, b, bw)
    if unbiased:
        saa = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        sbb = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    else:
        saa, sbb = kaa.sum() / (m * m), kbb.sum() / (n * n)
    return float(saa - 2.0 * kab.sum() / (m * n) + sbb)


def median_bandwidths(samples, multipliers: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0)) -> np.ndarray:
    """Median pairwise distance of the pooled sample times each multiplier.

    Falls back to 1.0 when the median distance is zero (constant predictions).
    """
    x = np.asarray(samples, dtype=float).ravel()
    iu = np.triu_indices(x.size, k=1)
    dist = np.abs(x[:, None] - x[None, :])[iu]
    med = float(np.median(dist)) if dist.size else 0.0
    if not med > 0:
        med = 1.0
    return med * np.asarray(multipliers, dtype=float)


def lambda_schedule(i: int, epoch: int, m: float = 1.01e8, switch: int = 5) -> float:
    """``2 / (1 + exp(-10 i / m')) - 1`` with ``m' = m`` before ``switch`` epochs and ``m / 10`` after."""
    if i < 0 or m <= 0:
        raise ValueError("need i >= 0 and m > 0")
    scale = m if epoch < switch else m / 10.0
    # tanh form of the same sigmoid: avoids overflow for large i
    return float(math.tanh(5.0 * i / scale))


def total_loss(mse: float, mmd_value: float, eta_weight: float, lam: float) -> float:
    return mse + eta_weight * lam * mmd_value


# ---------------------------------------------------------------------------
# source selection


def select_source(
    source_rankings: Mapping[Placement, EntropyRanking] | Iterable[tuple[Placement, EntropyRanking]],
    target_ranking: EntropyRanking,
) -> list[Placement]:
    """Source placements whose two lowest-entropy channels overlap the target's.

    Result is sorted, so it does not depend on the iteration order of the input.
    """
    items = source_rankings.items() if isinstance(source_rankings, Mapping) else source_rankings
    target = target_ranking.top2
    chosen = sorted({p for p, r in items if r.top2 & target})
    if not chosen:
        raise EmptySelection(
            "no source placement shares a top-2 channel with the target; "
            "fall back to using all source placements"
        )
    return chosen


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass
class TransferReport:
    rows: list[dict] = field(default_factory=list)
    selected: list[Placement] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])


def transfer_step(
    params: lstm.ModelParams,
    Xs: np.ndarray,
    ys: np.ndarray,
    Xt: np.ndarray,
    eta_weight: float,
    lam: float,
    bandwidths: np.ndarray | None = None,
    multipliers: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0),
    unbiased: bool = False,
) -> tuple[dict, list[np.ndarray]]:
    """Combined loss on one source/target batch pair and its parameter gradients.

    ``bandwidths`` default to the median heuristic on this batch's predictions
    and are treated as constants when differentiating.
    """
    pred_s, cache_s = lstm.forward_with_cache(params, Xs)
    pred_t, cache_t = lstm.forward_with_cache(params, Xt)
    mse = lstm.mse_loss(pred_s, ys)
    if bandwidths is None:
        bandwidths = median_bandwidths(np.concatenate([pred_s, pred_t]), multipliers)
    dist, g_s, g_t = mmd_with_grad(pred_s, pred_t, bandwidths, unbiased)
    loss = total_loss(mse, dist, eta_weight, lam)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite transfer loss")
    w = eta_weight * lam
    dy_s = 2.0 * (pred_s - ys) / ys.size + w * g_s
    grads = lstm.backward_from_output(params, Xs, dy_s, cache_s)
    if w != 0.0:
        grads_t = lstm.backward_from_output(params, Xt, w * g_t, cache_t)
        grads = [g + h for g, h in zip(grads, grads_t)]
    return {"mse": mse, "mmd": dist, "lambda": lam, "total": loss}, grads


def transfer_fit(
    params: lstm.ModelParams,
    source: tuple[np.ndarray, np.ndarray],
    target: np.ndarray,
    config: TransferConfig = TransferConfig(),
    use_mmd: bool = True,
) -> tuple[lstm.ModelParams, TransferReport]:
    """Refine ``params`` on labelled source windows and unlabelled target windows.

    One epoch is one pass over the target windows; every step pairs a target
    batch with the next source batch.  With ``use_mmd=False`` this is plain
    fine-tuning on the source data.
    """
    Xs, ys = source
    Xt = np.asarray(target, dtype=float)
    if len(Xs) == 0:
        raise EmptySelection("empty source pool")
    if len(Xt) < 2:
        raise ValueError("target needs at least two windows")
    if len(Xt) > config.budget:
        raise ValueError(f"{len(Xt)} target windows exceed the budget of {config.budget}")
    rng = np.random.default_rng(config.seed)
    p = params.copy()
    report = TransferReport()
    bs = config.batch_size
    src_order = rng.permutation(len(Xs))
    src_pos = 0
    step = 0
    for epoch in range(config.epochs):
        tgt_order = rng.permutation(len(Xt))
        for s in range(0, len(Xt), bs):
            t_idx = np.sort(tgt_order[s : s + bs])
            if len(t_idx) < 2:
                continue
            if src_pos + bs > len(Xs):
                src_order, src_pos = rng.permutation(len(Xs)), 0
            s_idx = np.sort(src_order[src_pos : src_pos + bs])
            src_pos += bs
            lam = lambda_schedule(step, epoch, config.schedule_m, config.epoch_switch)
            weight = config.eta_weight if use_mmd else 0.0
            try:
                stats, grads = transfer_step(
                    p, Xs[s_idx], ys[s_idx], Xt[t_idx], weight, lam,
                    multipliers=config.bandwidth_multipliers, unbiased=config.unbiased,
                )
            except FloatingPointError:
                raise lstm.TrainingDiverged(epoch) from None
            grads = lstm.clip_gradients(grads, config.clip_norm)
            p = p.with_trainable([a - config.lr * g for a, g in zip(p.trainable(), grads)])
            report.rows.append({"step": step, "epoch": epoch, **stats})
            step += 1
    return p, report
