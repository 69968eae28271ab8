"""Tracking-error metrics, binned error reports and the rank statistics used to compare them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import Placement

ANGLE_EDGES = tuple(float(x) for x in range(30, 181, 10))
VELOCITY_BIN = 0.1  # deg/ms


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("empty series")
    return p, t


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def velocity(truth, rate: float = 50.0, window: int = 2) -> np.ndarray:
    """Summed absolute angle change over ``window`` frames divided by the window's span in ms.

    Output ``k`` covers frames ``k .. k + window - 1``; empty when the series is shorter.
    """
    if window < 2:
        raise ValueError("velocity window must span at least 2 frames")
    x = np.asarray(truth, dtype=float).ravel()
    if x.size < window:
        return np.empty(0)
    step = np.abs(np.diff(x))
    csum = np.concatenate([[0.0], np.cumsum(step)])
    travelled = csum[window - 1 :] - csum[: x.size - window + 1]
    span_ms = (window - 1) * 1000.0 / rate
    return travelled / span_ms


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=float).ravel()
    b = np.asarray(y, dtype=float).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise ValueError("pearson is undefined for a constant series")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Mann-Whitney U


class MannWhitney(NamedTuple):
    u: float
    p: float
    method: str


def midranks(values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(doubled: np.ndarray, n_small: int, observed: int) -> float:
    """Two-sided permutation p-value of a doubled rank sum, by dynamic programming."""
    N = doubled.size
    total = int(doubled.sum())
    # ways[k, s]: fraction-free count of size-k subsets with doubled rank sum s
    ways = np.zeros((n_small + 1, total + 1))
    ways[0, 0] = 1.0
    for v in doubled.astype(int):
        ways[1:, v:] += ways[:-1, : total + 1 - v].copy()
    dist = ways[n_small] / math.comb(N, n_small)
    center = n_small * (N + 1)  # twice the expected rank sum
    dev = np.abs(np.arange(total + 1) - center)
    return float(min(1.0, dist[dev >= abs(observed - center)].sum()))


def mann_whitney_u(a, b, exact_below: int = 8) -> MannWhitney:
    """U statistic of ``a`` (midranks for ties) with a two-sided p-value.

    The p-value is exact (full permutation distribution) when the smaller
    sample has fewer than ``exact_below`` items, else the tie-corrected normal
    approximation with continuity correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n1, n2 = a.size, b.size
    N = n1 + n2
    ranks = midranks(np.concatenate([a, b]))
    r1 = ranks[:n1].sum()
    u = float(r1 - n1 * (n1 + 1) / 2.0)
    mu = n1 * n2 / 2.0
    if min(n1, n2) < exact_below:
        doubled = np.rint(2.0 * ranks).astype(int)
        if n1 <= n2:
            small, obs = n1, int(doubled[:n1].sum())
        else:
            small, obs = n2, int(doubled[n1:].sum())
        return MannWhitney(u, _exact_p(doubled, small, obs), "exact")
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts**3 - counts)) / (N * (N - 1))
    var = n1 * n2 / 12.0 * ((N + 1) - tie)
    if var <= 0:
        return MannWhitney(u, 1.0, "normal")
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return MannWhitney(u, float(min(1.0, math.erfc(z / math.sqrt(2.0)))), "normal")


# ---------------------------------------------------------------------------
# binned reports


@dataclass
class BinRow:
    lo: float
    hi: float
    mae: float
    count: int


@dataclass
class ErrorReport:
    overall_mae: float
    count: int
    per_placement: list[dict] = field(default_factory=list)
    angle_bins: list[BinRow] = field(default_factory=list)
    velocity_bins: list[BinRow] = field(default_factory=list)
    correlations: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _bin_rows(values: np.ndarray, err: np.ndarray, edges: np.ndarray) -> list[BinRow]:
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)
    rows = []
    for k in range(len(edges) - 1):
        sel = idx == k
        n = int(sel.sum())
        rows.append(BinRow(float(edges[k]), float(edges[k + 1]), float(err[sel].mean()) if n else float("nan"), n))
    return rows


def _bin_correlation(rows: list[BinRow], what: str) -> float:
    used = [r for r in rows if r.count > 0]
    if len(used) < 2:
        return float("nan")
    x = [r.count if what == "count" else 0.5 * (r.lo + r.hi) for r in used]
    try:
        return pearson(x, [r.mae for r in used])
    except ValueError:
        return float("nan")


class Record(NamedTuple):
    placement: Placement
    pred: np.ndarray
    truth: np.ndarray
    rate: float = 50.0


def error_report(records: Iterable[Record], velocity_window: int = 2) -> ErrorReport:
    """Aggregate per-frame errors; frames where the prediction is NaN are skipped."""
    errs, angles, vels = [], [], []
    by_place: dict[Placement, list[np.ndarray]] = {}
    for rec in records:
        p, t = _pair(rec.pred, rec.truth)
        v = velocity(t, rec.rate, velocity_window)
        if v.size == 0:
            v = np.zeros(1)
        v_frame = np.concatenate([np.full(t.size - v.size, v[0]), v])
        ok = np.isfinite(p)
        e = np.abs(p[ok] - t[ok])
        errs.append(e)
        angles.append(t[ok])
        vels.append(v_frame[ok])
        by_place.setdefault(rec.placement, []).append(e)
    if not errs or sum(e.size for e in errs) == 0:
        raise ValueError("no evaluable frames")
    err = np.concatenate(errs)
    ang = np.concatenate(angles)
    vel = np.concatenate(vels)
    v_edges = np.arange(0.0, max(VELOCITY_BIN, float(vel.max())) + VELOCITY_BIN + 1e-12, VELOCITY_BIN)
    angle_rows = _bin_rows(ang, err, np.asarray(ANGLE_EDGES))
    vel_rows = _bin_rows(vel, err, v_edges)
    places = []
    for pl in sorted(by_place):
        e = np.concatenate(by_place[pl])
        places.append({"eta": pl.eta, "beta": pl.beta, "mae": float(e.mean()) if e.size else float("nan"), "count": int(e.size)})
    corr = {
        "angle_count_vs_error": _bin_correlation(angle_rows, "count"),
        "velocity_vs_error": _bin_correlation(vel_rows, "center"),
        "velocity_count_vs_error": _bin_correlation(vel_rows, "count"),
    }
    return ErrorReport(float(err.mean()), int(err.size), places, angle_rows, vel_rows, corr)
