"""Stacked LSTM regressor (window of sensor frames -> one angle) in plain numpy.

Gate layout inside each ``(d_in + hidden, 4 * hidden)`` weight matrix is
input, forget, cell, output.  Rows ``[:d_in]`` act on the layer input and rows
``[d_in:]`` on the previous hidden state.
"""

from __future__ import annotations

import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Session, Window, window_array

logger = logging.getLogger(__name__)

CKPT_FORMAT = "jointpad-lstm"
CKPT_VERSION = 1
EPS = 1e-8


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        self.epoch = epoch
        super().__init__(f"{detail} at epoch {epoch}")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 32
    window: int = 30
    channels: int = 6
    batch_size: int = 64
    lr: float = 0.01
    lr_decay: float = 0.9
    decay_every: int = 2
    clip_norm: float = 5.0
    epochs: int = 20
    optimizer: str = "adam"
    layer_standardize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.window < 1 or self.channels < 1:
            raise ValueError("layers, hidden, window and channels must be >= 1")
        if min(self.lr, self.lr_decay, self.clip_norm, self.batch_size, self.decay_every) <= 0:
            raise ValueError("rates, batch size and clip norm must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        return cls(layers=6, hidden=256, batch_size=256, **kw)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    w_out: np.ndarray
    b_out: np.ndarray
    in_mean: np.ndarray
    in_var: np.ndarray
    # frozen per-layer (mean, std) applied between stacked layers; empty when disabled
    layer_stats: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def hidden(self) -> int:
        return self.w_out.shape[0]

    @property
    def channels(self) -> int:
        return self.in_mean.shape[0]

    def trainable(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.w_out, self.b_out]

    def with_trainable(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        arrays = list(arrays)
        n = len(self.weights)
        return replace(
            self,
            weights=arrays[0 : 2 * n : 2],
            biases=arrays[1 : 2 * n : 2],
            w_out=arrays[2 * n],
            b_out=arrays[2 * n + 1],
        )

    def copy(self) -> "ModelParams":
        return replace(
            self.with_trainable([a.copy() for a in self.trainable()]),
            in_mean=self.in_mean.copy(),
            in_var=self.in_var.copy(),
            layer_stats=[(m.copy(), s.copy()) for m, s in self.layer_stats],
        )

    def n_params(self) -> int:
        return int(sum(a.size for a in self.trainable()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.trainable())


def init(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases except forget gates at 1."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    h = config.hidden
    bound = 1.0 / math.sqrt(h)
    weights, biases = [], []
    d = config.channels
    for _ in range(config.layers):
        weights.append(rng.uniform(-bound, bound, size=(d + h, 4 * h)))
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        biases.append(b)
        d = h
    return ModelParams(
        weights=weights,
        biases=biases,
        w_out=rng.uniform(-bound, bound, size=h),
        b_out=np.zeros(1),
        in_mean=np.zeros(config.channels),
        in_var=np.ones(config.channels),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(params: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != params.channels:
        raise ValueError(
            f"expected windows of shape (T, {params.channels}) or (B, T, {params.channels}), "
            f"got {X.shape}"
        )
    return X


def _forward(params: ModelParams, X: np.ndarray, keep: bool):
    B, T, _ = X.shape
    inp = (X - params.in_mean) / np.sqrt(params.in_var + EPS)
    caches = []
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        H = W.shape[1] // 4
        d = inp.shape[2]
        Wx, Wh = W[:d], W[d:]
        zx = inp @ Wx + b
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, T, H))
        if keep:
            gates = np.empty((B, T, 4 * H))
            cs = np.empty((B, T, H))
        for t in range(T):
            z = zx[:, t] + h @ Wh
            a = _sigmoid(z)
            g = np.tanh(z[:, 2 * H : 3 * H])
            c = a[:, H : 2 * H] * c + a[:, :H] * g
            h = a[:, 3 * H :] * np.tanh(c)
            hs[:, t] = h
            if keep:
                a[:, 2 * H : 3 * H] = g
                gates[:, t] = a
                cs[:, t] = c
        if keep:
            caches.append((inp, hs, cs, gates))
        inp = hs
        if params.layer_stats and layer < len(params.weights) - 1:
            m, s = params.layer_stats[layer]
            inp = (hs - m) / s
    y = inp[:, -1] @ params.w_out + params.b_out[0]
    return y, caches


def forward(params: ModelParams, window) -> float | np.ndarray:
    """Angle estimate (deg) for one (T, C) window or a (B, T, C) batch."""
    X = np.asarray(window, dtype=float)
    single = X.ndim == 2
    y, _ = _forward(params, _as_batch(params, X), keep=False)
    return float(y[0]) if single else y


def forward_batched(params: ModelParams, X, batch: int = 1024) -> np.ndarray:
    X = _as_batch(params, X)
    if X.shape[0] == 0:
        return np.empty(0)
    return np.concatenate([_forward(params, X[i : i + batch], False)[0] for i in range(0, len(X), batch)])


def backward_from_output(
    params: ModelParams, X: np.ndarray, dy: np.ndarray, caches
) -> list[np.ndarray]:
    """Gradients of ``sum(dy * y)`` w.r.t. the trainable arrays (BPTT)."""
    n_layers = len(params.weights)
    top_hs = caches[-1][1]
    h_last = top_hs[:, -1]
    g_wout = h_last.T @ dy
    g_bout = np.array([dy.sum()])
    dhs = np.zeros_like(top_hs)
    dhs[:, -1] = dy[:, None] * params.w_out

    grads_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for layer in range(n_layers - 1, -1, -1):
        inp, hs, cs, gates = caches[layer]
        W = params.weights[layer]
        B, T, H = hs.shape
        d = inp.shape[2]
        Wh = W[d:]
        i = gates[:, :, :H]
        f = gates[:, :, H : 2 * H]
        g = gates[:, :, 2 * H : 3 * H]
        o = gates[:, :, 3 * H :]
        c_prev = np.concatenate([np.zeros((B, 1, H)), cs[:, :-1]], axis=1)
        tc = np.tanh(cs)
        # local derivatives: dz_{i,f,g} = dc * coef, dz_o = dh * coef_o, dc += dh * coef_c
        coef = np.stack([g * i * (1.0 - i), c_prev * f * (1.0 - f), i * (1.0 - g * g)], axis=2)
        coef_o = tc * o * (1.0 - o)
        coef_c = o * (1.0 - tc * tc)
        dz_all = np.empty((B, T, 4, H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dhs[:, t] + dh_next
            dc = dc_next + dh * coef_c[:, t]
            dz = dz_all[:, t]
            dz[:, :3] = dc[:, None, :] * coef[:, t]
            dz[:, 3] = dh * coef_o[:, t]
            dc_next = dc * f[:, t]
            dh_next = dz.reshape(B, 4 * H) @ Wh.T
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        flat_dz = dz_all.reshape(B * T, 4 * H)
        g_wx = inp.reshape(B * T, d).T @ flat_dz
        g_wh = h_prev.reshape(B * T, H).T @ flat_dz
        grads_w[layer] = np.vstack([g_wx, g_wh])
        grads_b[layer] = flat_dz.sum(axis=0)
        if layer > 0:
            dinp = (flat_dz @ W[:d].T).reshape(B, T, d)
            if params.layer_stats:
                dinp = dinp / params.layer_stats[layer - 1][1]
            dhs = dinp

    out: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        out += [gw, gb]
    return out + [g_wout, g_bout]


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("predictions and targets must be equal-length and nonempty")
    r = p - y
    return float(np.mean(r * r))


def forward_with_cache(params: ModelParams, X):
    X = _as_batch(params, X)
    return _forward(params, X, keep=True)


def backward(params: ModelParams, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean-MSE loss over the batch and its BPTT gradients."""
    X = _as_batch(params, X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    pred, caches = _forward(params, X, keep=True)
    loss = mse_loss(pred, y)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    dy = 2.0 * (pred - y) / y.size
    return loss, backward_from_output(params, X, dy, caches)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


# ---------------------------------------------------------------------------
# training


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray | None]:
    """Accept ``(X, y)`` arrays or a sequence of :class:`Window`."""
    if isinstance(windows, tuple) and len(windows) == 2:
        X, y = windows
        return np.asarray(X, dtype=float), None if y is None else np.asarray(y, dtype=float)
    windows = list(windows)
    if not windows:
        return np.empty((0, 0, 0)), np.empty(0)
    X = np.stack([w.values for w in windows])
    y = None if windows[0].target is None else np.array([w.target for w in windows])
    return X, y


def standardization_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = X.reshape(-1, X.shape[2])
    return flat.mean(axis=0), flat.var(axis=0)


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    final_epoch: int = -1
    wall_time: float = 0.0

    def as_rows(self) -> list[dict]:
        return [
            {"epoch": e, "lr": lr, "train_mse": tr, "val_mse": va}
            for e, (lr, tr, va) in enumerate(zip(self.lr, self.train_mse, self.val_mse))
        ]


class Optimizer:
    def __init__(self, kind: str, beta1: float = 0.9, beta2: float = 0.999):
        self.kind = kind
        self.beta1, self.beta2 = beta1, beta2
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray], lr: float) -> list[np.ndarray]:
        if self.kind == "sgd":
            return [a - lr * g for a, g in zip(arrays, grads)]
        if self.m is None:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = []
        for k, (a, g) in enumerate(zip(arrays, grads)):
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1**self.t)
            vh = self.v[k] / (1 - b2**self.t)
            out.append(a - lr * mh / (np.sqrt(vh) + 1e-8))
        return out


def compute_layer_stats(params: ModelParams, X: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-feature mean/std of each non-top layer's output on ``X``, frozen afterwards."""
    n_inner = len(params.weights) - 1
    H = params.hidden
    identity = (np.zeros(H), np.ones(H))
    stats: list[tuple[np.ndarray, np.ndarray]] = []
    for layer in range(n_inner):
        probe = replace(params, layer_stats=stats + [identity] * (n_inner - layer))
        _, caches = _forward(probe, X, keep=True)
        hs = caches[layer][1].reshape(-1, H)
        stats.append((hs.mean(axis=0), hs.std(axis=0) + 1e-3))
    return stats


def prepare_params(params: ModelParams, X: np.ndarray, y: np.ndarray, config: ModelConfig) -> ModelParams:
    """Fit input standardization on the training windows and start the output bias at the target mean."""
    p = params.copy()
    p.in_mean, p.in_var = standardization_stats(X)
    p.b_out = np.array([float(np.mean(y))])
    if config.layer_standardize and len(p.weights) > 1:
        sample = X[np.random.default_rng(config.seed).permutation(len(X))[:2048]]
        p.layer_stats = compute_layer_stats(p, sample)
    return p


def fit(
    params: ModelParams,
    train,
    validate,
    config: ModelConfig,
    prepare: bool = True,
    log_every: int = 0,
) -> tuple[ModelParams, TrainReport]:
    """Mini-batch training with step-wise lr decay and global-norm clipping.

    Returns the parameters of the epoch with the lowest validation MSE.
    """
    Xtr, ytr = stack_windows(train)
    Xva, yva = stack_windows(validate)
    if len(Xtr) == 0 or len(Xva) == 0 or ytr is None or yva is None:
        raise ValueError("train and validate splits must be nonempty and labelled")
    start = time.perf_counter()
    p = prepare_params(params, Xtr, ytr, config) if prepare else params.copy()
    opt = Optimizer(config.optimizer)
    report = TrainReport()
    best, best_val = p.copy(), math.inf
    rng = np.random.default_rng(config.seed)
    n = len(Xtr)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = np.sort(order[s : s + config.batch_size])
            try:
                loss, grads = backward(p, Xtr[idx], ytr[idx])
            except FloatingPointError:
                raise TrainingDiverged(epoch) from None
            grads = clip_gradients(grads, config.clip_norm)
            p = p.with_trainable(opt.step(p.trainable(), grads, lr))
            total += loss * len(idx)
        train_mse = total / n
        val_mse = mse_loss(forward_batched(p, Xva), yva)
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise TrainingDiverged(epoch)
        report.train_mse.append(train_mse)
        report.val_mse.append(val_mse)
        report.lr.append(lr)
        report.final_epoch = epoch
        if val_mse < best_val:
            best_val, best = val_mse, p.copy()
            report.best_epoch = epoch
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d lr %.5f train %.3f val %.3f", epoch, lr, train_mse, val_mse)
    report.wall_time = time.perf_counter() - start
    return best, report


def predict_series(params: ModelParams, readings, window: int | None = None) -> np.ndarray:
    """One estimate per frame; the first ``window - 1`` frames are NaN."""
    if isinstance(readings, Session):
        readings = readings.readings
    readings = np.asarray(readings, dtype=float)
    W = window or 30
    out = np.full(readings.shape[0], np.nan)
    if readings.shape[0] < W:
        logger.warning("series of %d frames shorter than window %d", readings.shape[0], W)
        return out
    out[W - 1 :] = forward_batched(params, np.ascontiguousarray(window_array(readings, W)))
    return out


# ---------------------------------------------------------------------------
# checkpoint container: .npz with arrays plus a JSON header


def save_checkpoint(
    path: Path | str, params: ModelParams, config: ModelConfig, extra: dict | None = None
) -> Path:
    path = Path(path)
    header = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": asdict(config),
        "layer_standardize": bool(params.layer_stats),
        "extra": extra or {},
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{k}"], arrays[f"b{k}"] = w, b
    for k, (m, s) in enumerate(params.layer_stats):
        arrays[f"lm{k}"], arrays[f"ls{k}"] = m, s
    arrays.update(w_out=params.w_out, b_out=params.b_out, in_mean=params.in_mean, in_var=params.in_var)
    # np.savez stamps entries with the wall clock; fixed timestamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
    return path


def load_checkpoint(path: Path | str) -> tuple[ModelParams, ModelConfig, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != CKPT_FORMAT:
            raise ValueError(f"{path}: not a model checkpoint")
        if header.get("version") != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        known = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in header["config"].items() if k in known})
        n = config.layers
        stats = [(z[f"lm{k}"], z[f"ls{k}"]) for k in range(n - 1)] if header["layer_standardize"] else []
        params = ModelParams(
            weights=[z[f"w{k}"] for k in range(n)],
            biases=[z[f"b{k}"] for k in range(n)],
            w_out=z["w_out"],
            b_out=z["b_out"],
            in_mean=z["in_mean"],
            in_var=z["in_var"],
            layer_stats=stats,
        )
    return params, config, header.get("extra", {})
