"""Domain types, session file I/O, preprocessing and placement partitioning."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_CHANNELS = 6
RAW_MAX = 1023.0
ETA_LIMIT = 4.0
TRUTH_RANGE = (0.0, 190.0)
DEFAULT_WINDOW = 30
SPLITS = ("train", "validate", "test")

# Placement counts of the single-subject dataset: 378 / 126 / 135 out of 639.
REFERENCE_FRACTIONS = (378 / 639, 126 / 639, 135 / 639)

SESSION_HEADER = ["timestamp_ms", "s1", "s2", "s3", "s4", "s5", "s6"]
META_KEYS = ("eta_cm", "beta_deg", "user_id", "motion_id", "rate_hz")


class SessionFormatError(ValueError):
    """Malformed session file; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, order=True)
class Placement:
    """Pad position: lateral offset ``eta`` (cm) and circular offset ``beta`` (deg)."""

    eta: float
    beta: float

    def __post_init__(self):
        eta = float(self.eta)
        if not (-ETA_LIMIT - 1e-9 <= eta <= ETA_LIMIT + 1e-9):
            raise ValidationError(f"eta={eta} outside [-{ETA_LIMIT}, {ETA_LIMIT}] cm")
        beta = float(self.beta) % 360.0
        # -0.0 and 360 - tiny both normalise to 0
        if beta == 0.0 or math.isclose(beta, 360.0, abs_tol=1e-9):
            beta = 0.0
        object.__setattr__(self, "eta", eta + 0.0)
        object.__setattr__(self, "beta", beta)

    @property
    def key(self) -> str:
        return f"e{self.eta:+g}_b{self.beta:g}"


@dataclass(frozen=True)
class SensorFrame:
    timestamp: int
    readings: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Session:
    """One recording at one placement.

    Frames are held column-wise: ``timestamps`` (ms, int64) and ``readings``
    (n_frames x n_channels).  ``truth`` is the optional per-frame angle in
    degrees.  Arrays are read-only after construction.
    """

    placement: Placement
    timestamps: np.ndarray
    readings: np.ndarray
    truth: np.ndarray | None = None
    user_id: str = "u0"
    motion_id: str = "bend"
    rate_hz: float = 50.0
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).copy()
        rd = np.array(self.readings, dtype=float, ndmin=2)
        if rd.ndim != 2 or rd.shape[0] != ts.shape[0]:
            raise ValidationError(
                f"readings shape {rd.shape} does not match {ts.shape[0]} timestamps"
            )
        if ts.size and ts[0] < 0:
            raise ValidationError("timestamps must be non-negative")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise ValidationError(f"timestamps not strictly increasing at frame {bad}")
        if not np.all(np.isfinite(rd)):
            raise ValidationError("non-finite sensor reading")
        tr = None
        if self.truth is not None:
            tr = np.asarray(self.truth, dtype=float).copy()
            if tr.shape != ts.shape:
                raise ValidationError(f"truth length {tr.size} != frame count {ts.size}")
            lo, hi = TRUTH_RANGE
            if tr.size and (np.nanmin(tr) < lo or np.nanmax(tr) > hi):
                raise ValidationError(f"truth outside [{lo}, {hi}] degrees")
            tr = _frozen(tr)
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "readings", _frozen(rd))
        object.__setattr__(self, "truth", tr)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def n_channels(self) -> int:
        return int(self.readings.shape[1])

    @property
    def frames(self) -> Iterator[SensorFrame]:
        for t, row in zip(self.timestamps.tolist(), self.readings.tolist()):
            yield SensorFrame(t, tuple(row))

    def with_readings(self, readings: np.ndarray, **meta: str) -> "Session":
        merged = {**self.meta, **meta}
        return replace(self, readings=readings, meta=merged)

    def validate_raw(self) -> None:
        if self.n_channels != N_CHANNELS:
            raise ValidationError(f"expected {N_CHANNELS} channels, got {self.n_channels}")
        if self.readings.size and (self.readings.min() < 0 or self.readings.max() > RAW_MAX):
            raise ValidationError(f"raw readings outside [0, {RAW_MAX:g}]")


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    target: float | None = None


@dataclass
class Dataset:
    sessions: list[Session]
    split: dict[Placement, str] = field(default_factory=dict)

    @property
    def placements(self) -> list[Placement]:
        return sorted({s.placement for s in self.sessions})

    def sessions_in(self, *names: str) -> list[Session]:
        return [s for s in self.sessions if self.split.get(s.placement) in names]


# ---------------------------------------------------------------------------
# file I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def session_to_csv(session: Session) -> str:
    buf = io.StringIO()
    header = list(SESSION_HEADER)
    if session.truth is not None:
        header.append("angle_deg")
    buf.write(",".join(header) + "\n")
    for i, t in enumerate(session.timestamps.tolist()):
        cells = [str(t)] + [_fmt(v) for v in session.readings[i]]
        if session.truth is not None:
            cells.append(_fmt(session.truth[i]))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def meta_to_text(session: Session) -> str:
    fields = {
        "eta_cm": _fmt(session.placement.eta),
        "beta_deg": _fmt(session.placement.beta),
        "user_id": session.user_id,
        "motion_id": session.motion_id,
        "rate_hz": _fmt(session.rate_hz),
    }
    extra = {k: v for k, v in session.meta.items() if k not in fields}
    lines = [f"{k}={v}" for k, v in fields.items()]
    lines += [f"{k}={extra[k]}" for k in sorted(extra)]
    return "\n".join(lines) + "\n"


def meta_path(path: Path | str) -> Path:
    return Path(path).with_suffix(".meta")


def save_session(session: Session, path: Path | str) -> Path:
    path = Path(path)
    session.validate_raw()
    path.write_text(session_to_csv(session), newline="")
    meta_path(path).write_text(meta_to_text(session), newline="")
    return path


def _read_meta(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise SessionFormatError(f"{path.name}: expected key=value", n)
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_session(path: Path | str) -> Session:
    """Parse a session CSV and its ``.meta`` sidecar."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    mp = meta_path(path)
    meta = _read_meta(mp) if mp.exists() else {}

    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SessionFormatError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    has_truth = header == SESSION_HEADER + ["angle_deg"]
    if header != SESSION_HEADER and not has_truth:
        raise SessionFormatError(f"unexpected header {header}", 1)
    width = len(header)

    ts, rd, tr = [], [], []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise SessionFormatError(f"expected {width} columns, got {len(row)}", n)
        try:
            t = int(row[0])
            vals = [float(v) for v in row[1:7]]
            if has_truth:
                tr.append(float(row[7]))
        except ValueError as exc:
            raise SessionFormatError(str(exc), n) from None
        if any(v < 0 or v > RAW_MAX or not math.isfinite(v) for v in vals):
            raise ValidationError(f"line {n}: reading outside [0, {RAW_MAX:g}]")
        ts.append(t)
        rd.append(vals)

    try:
        placement = Placement(float(meta.get("eta_cm", 0.0)), float(meta.get("beta_deg", 0.0)))
        rate = float(meta.get("rate_hz", 50.0))
    except ValueError as exc:
        raise SessionFormatError(f"{mp.name}: {exc}") from None
    extra = {k: v for k, v in meta.items() if k not in META_KEYS}
    return Session(
        placement=placement,
        timestamps=np.array(ts, dtype=np.int64),
        readings=np.array(rd, dtype=float).reshape(-1, N_CHANNELS),
        truth=np.array(tr) if has_truth else None,
        user_id=meta.get("user_id", "u0"),
        motion_id=meta.get("motion_id", "bend"),
        rate_hz=rate,
        meta=extra,
    )


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class MinMaxStats:
    lo: np.ndarray
    hi: np.ndarray
    degenerate: np.ndarray

    def apply(self, readings: np.ndarray) -> np.ndarray:
        span = np.where(self.degenerate, 1.0, self.hi - self.lo)
        out = (np.asarray(readings, dtype=float) - self.lo) / span
        return np.where(self.degenerate, 0.5, out)


def minmax_stats(readings: np.ndarray) -> MinMaxStats:
    readings = np.asarray(readings, dtype=float)
    lo, hi = readings.min(axis=0), readings.max(axis=0)
    return MinMaxStats(lo, hi, hi <= lo)


def normalize_minmax(session: Session) -> tuple[Session, MinMaxStats]:
    """Per-channel max-min scaling to [0, 1] over the whole session.

    Constant channels map to 0.5 and are flagged in ``stats.degenerate``.
    """
    stats = minmax_stats(session.readings)
    if stats.degenerate.any():
        logger.warning("degenerate channel(s) %s", np.flatnonzero(stats.degenerate).tolist())
    return session.with_readings(stats.apply(session.readings)), stats


def _repair_outliers(x: np.ndarray, z: float) -> np.ndarray:
    n = x.size
    if n < 3:
        return x
    sd = x.std()
    if sd == 0:
        return x
    bad = np.abs(x - x.mean()) > z * sd
    if not bad.any():
        return x
    good = np.flatnonzero(~bad)
    if good.size == 0:
        return x
    idx = np.arange(n)
    out = x.copy()
    out[bad] = np.interp(idx[bad], good, x[good])
    return out


def remove_outliers(session: Session, z: float = 3.0) -> Session:
    """Replace per-channel z-score outliers by linear interpolation of the kept neighbours."""
    if z <= 0:
        raise ValueError("z must be positive")
    cleaned = np.column_stack(
        [_repair_outliers(session.readings[:, c], z) for c in range(session.n_channels)]
    ) if len(session) else session.readings
    return session.with_readings(cleaned)


def resample_truth(
    truth_timestamps: Sequence[float],
    truth_values: Sequence[float],
    sensor_timestamps: Sequence[float],
) -> np.ndarray:
    """Linearly interpolate a ground-truth angle stream onto sensor timestamps."""
    tt = np.asarray(truth_timestamps, dtype=float)
    tv = np.asarray(truth_values, dtype=float)
    st = np.asarray(sensor_timestamps, dtype=float)
    if tt.shape != tv.shape or tt.size == 0:
        raise ValueError("truth timestamps and values must be equal-length and nonempty")
    if st.size and (st.min() < tt[0] or st.max() > tt[-1]):
        raise ValueError(
            f"sensor timestamps [{st.min():g}, {st.max():g}] outside truth range "
            f"[{tt[0]:g}, {tt[-1]:g}]: extrapolation refused"
        )
    return np.interp(st, tt, tv)


def window_array(values: np.ndarray, width: int) -> np.ndarray:
    """Stride-1 sliding windows as an (n - width + 1, width, channels) view."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < width:
        return np.empty((0, width, values.shape[1]))
    return np.lib.stride_tricks.sliding_window_view(values, width, axis=0).transpose(0, 2, 1)


def make_windows(session: Session, W: int = DEFAULT_WINDOW) -> list[Window]:
    if len(session) < W:
        logger.warning("session with %d frames is shorter than window %d", len(session), W)
        return []
    arr = window_array(session.readings, W)
    if session.truth is None:
        return [Window(np.array(a)) for a in arr]
    targets = session.truth[W - 1 :]
    return [Window(np.array(a), float(t)) for a, t in zip(arr, targets)]


# ---------------------------------------------------------------------------
# partitioning


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; every split gets at least one."""
    if n < len(fractions):
        raise ValueError(f"{n} placements cannot fill {len(fractions)} splits")
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def partition(
    dataset: Dataset,
    fractions: Sequence[float] = REFERENCE_FRACTIONS,
    seed: int = 0,
    names: Sequence[str] = SPLITS,
) -> Dataset:
    """Assign whole placements to train/validate/test splits."""
    if len(fractions) != len(names):
        raise ValueError("one fraction per split required")
    if any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must be positive and sum to 1")
    placements = dataset.placements
    counts = split_counts(len(placements), fractions)
    shuffled = list(placements)
    random.Random(seed).shuffle(shuffled)
    split: dict[Placement, str] = {}
    start = 0
    for name, c in zip(names, counts):
        for p in shuffled[start : start + c]:
            split[p] = name
        start += c
    return Dataset(list(dataset.sessions), split)
