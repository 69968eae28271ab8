"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line, printed in the
terminal summary.  Criteria 5-7 share one set of desk-scale runs (five seeds)
which take several minutes on one core.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, SMALL_INI, run_pipeline
from jointpad import lstm
from jointpad.entropy import EntropyConfig, fuzzy_entropy
from jointpad.evaluation import mann_whitney_u, pearson
from jointpad.experiments import DeskSetup, criterion_table, source_run, transfer_run
from jointpad.smooth import KalmanConfig, initial_state, smooth_series, step
from jointpad.transfer import lambda_schedule, median_bandwidths, mmd
from oracles import fuzzy_entropy_loops, mann_whitney_enumerated, max_fd_relative_error

SEEDS = range(5)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def test_criterion_01_full_scale_not_claimed():
    # the private recordings are unavailable; no full-scale error figure is asserted
    # anywhere, and criteria 2-10 are the substitutes
    cfg = lstm.ModelConfig.full_scale()
    record(1, (cfg.layers, cfg.hidden) == (6, 256),
           "full-scale figures not reproducible (private data); full-scale config kept, substitutes 2-10")


def test_criterion_02_fuzzy_entropy_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 51))
        m = int(rng.choice([1, 2]))
        r = float(rng.choice([0.1, 0.25]))
        if n < m + 2:
            n = m + 2
        x = rng.uniform(0, 1, n)
        worst = max(worst, abs(fuzzy_entropy(x, EntropyConfig(m=m, r=r)) - fuzzy_entropy_loops(x, m, r)))
    const = fuzzy_entropy(np.full(30, 0.4))
    elapsed = time.perf_counter() - start
    record(2, worst < 1e-9 and const == 0.0 and elapsed < 5.0,
           f"max |diff| {worst:.2e} over 100 series, constant -> {const}, {elapsed:.2f} s")


def test_criterion_03_gradient_gate():
    start = time.perf_counter()
    cfg = lstm.ModelConfig(layers=1, hidden=4, window=5, channels=6)
    worst = 0.0
    for point in range(20):
        rng = np.random.default_rng(point)
        p = lstm.init(cfg, point)
        p = p.with_trainable([rng.normal(0, 0.5, a.shape) for a in p.trainable()])
        X = rng.normal(size=(4, 5, 6))
        y = rng.normal(size=4)
        _, grads = lstm.backward(p, X, y)
        worst = max(worst, max_fd_relative_error(p.trainable(), grads, lambda: lstm.mse_loss(lstm.forward(p, X), y)))
    elapsed = time.perf_counter() - start
    record(3, worst < 1e-4 and elapsed < 30.0, f"max relative error {worst:.2e} over 20 points, {elapsed:.1f} s")


def test_criterion_04_mmd_identities():
    rng = np.random.default_rng(4)
    a = rng.normal(size=40)
    bw = median_bandwidths(a)
    self_mmd = abs(mmd(a, a, bw))
    lowest = min(mmd(rng.normal(size=20), rng.normal(s, 1, size=15), bw) for s in np.linspace(0, 3, 30))
    hand = 1.0 - 2.0 * math.exp(-50.0) + 1.0
    point_mass = abs(mmd([0.0] * 3, [10.0] * 2, [1.0]) - hand)
    lams = [lambda_schedule(i, e, 1e4) for e in (0, 6) for i in range(0, 20000, 100)]
    monotone = all(b >= a for a, b in zip(lams[:200], lams[1:200])) and all(
        b >= a for a, b in zip(lams[200:], lams[201:])
    )
    ok = self_mmd < 1e-12 and lowest >= -1e-12 and point_mass < 1e-9 and lambda_schedule(0, 0) == 0 and monotone
    record(4, ok, f"mmd(a,a) {self_mmd:.1e}, min mmd {lowest:.1e}, point-mass err {point_mass:.1e}, "
                  f"lambda(0)=0, monotone={monotone}")


# ---------------------------------------------------------------------------
# desk-scale experiments shared by criteria 5-7


@pytest.fixture(scope="session")
def desk_runs():
    runs = {}
    for seed in SEEDS:
        setup = DeskSetup(seed=seed)
        runs[seed] = {}
        for crit in ("fuzzy", "none"):
            src = source_run(setup, crit)
            runs[seed][crit] = (src, transfer_run(setup, src))
    return runs


def test_criterion_05_displacement_robustness(desk_runs):
    lines, passed, total_time = [], 0, 0.0
    for seed in SEEDS:
        src, _ = desk_runs[seed]["fuzzy"]
        total_time += src.seconds
        a = src.test_mae < 0.5 * src.baseline_mae
        b = src.test_mae <= 1.5 * src.seen_mae
        passed += a and b
        lines.append(f"s{seed}: test {src.test_mae:.2f} seen {src.seen_mae:.2f} mean-baseline {src.baseline_mae:.2f}")
    print("\n".join(lines))
    record(5, passed >= 4 and total_time < 600,
           f"{passed}/5 seeds meet both bounds; {total_time:.0f} s total training + scoring | " + "; ".join(lines))


def test_criterion_06_transfer_ablation(desk_runs):
    vs_frozen = vs_none = 0
    lines = []
    for seed in SEEDS:
        _, fz = desk_runs[seed]["fuzzy"]
        _, nr = desk_runs[seed]["none"]
        vs_frozen += fz.transfer_mae < fz.frozen_mae
        vs_none += fz.transfer_mae < nr.transfer_mae
        lines.append(f"s{seed}: frozen {fz.frozen_mae:.2f} fuzzy+transfer {fz.transfer_mae:.2f} "
                     f"no-rank+transfer {nr.transfer_mae:.2f}")
    print("\n".join(lines))
    record(6, vs_frozen >= 4 and vs_none >= 3,
           f"beats frozen {vs_frozen}/5, beats no-ranking {vs_none}/5 | " + "; ".join(lines))


def test_criterion_07_ranking_criterion_table(desk_runs):
    cached = {c: desk_runs[0][c] for c in ("fuzzy", "none")}
    rows = criterion_table(DeskSetup(seed=0), cached=cached)
    header = f"{'criterion':>9} {'test':>7} {'user frozen':>12} {'user transfer':>14}"
    table = [header] + [
        f"{r['criterion']:>9} {r['test_mae']:7.2f} {r['new_user_frozen']:12.2f} {r['new_user_transfer']:14.2f}"
        for r in rows
    ]
    print("\n".join(table))
    ok = [r["criterion"] for r in rows] == ["none", "jitter", "sd", "fuzzy"] and all(
        math.isfinite(v) for r in rows for k, v in r.items() if k != "criterion"
    )
    cells = ", ".join(f"{r['criterion']} {r['new_user_transfer']:.2f}" for r in rows)
    record(7, ok, f"table over no-rank/jitter/SD/fuzzy built (new-user MAE after transfer: {cells})")


# ---------------------------------------------------------------------------


def test_criterion_08_kalman():
    wins = 0
    for seed in range(10):
        t = np.arange(1000) * 0.02
        truth = 40.0 + 30.0 * t
        z = truth + np.random.default_rng(seed).normal(0, 2.0, t.size)
        out = smooth_series(z)
        rms = lambda a: np.sqrt(np.mean((a - truth) ** 2))
        jit = lambda a: np.sqrt(np.mean(np.diff(a, 3) ** 2))
        wins += rms(out) < rms(z) and jit(out) < jit(z)
    cfg = KalmanConfig()
    state = initial_state(0.0, cfg)
    zs = np.random.default_rng(0).normal(90, 2, 20000).tolist()
    start = time.perf_counter()
    for v in zs:
        state = step(state, v, cfg)
    per_step = (time.perf_counter() - start) / len(zs)
    record(8, wins >= 9 and per_step < 1e-4, f"{wins}/10 seeds improve RMS and jitter, {per_step * 1e3:.4f} ms per step")


def test_criterion_09_statistics_oracles():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(30):
        a, b = rng.integers(0, 8, 4).astype(float), rng.integers(0, 8, 4).astype(float)
        u, p, count = mann_whitney_enumerated(a, b)
        res = mann_whitney_u(a, b)
        assert count == 70 and res.u == u
        worst = max(worst, abs(res.p - p))
    x = np.linspace(-3, 5, 17)
    pe = max(abs(pearson(x, 2 * x + 1) - 1), abs(pearson(x, -x) + 1), abs(pearson(x, 0.1 * x - 40) - 1))
    record(9, worst < 1e-12 and pe < 1e-12, f"exact p vs 70-arrangement enumeration {worst:.1e}, pearson {pe:.1e}")


def test_criterion_10_cli_determinism(tmp_path):
    ini = tmp_path / "small.ini"
    ini.write_text(SMALL_INI)
    a, b = tmp_path / "a", tmp_path / "b"
    codes = run_pipeline(a, ini) + run_pipeline(b, ini)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differing = [str(f) for f in files if not filecmp.cmp(a / f, b / f, shallow=False)]
    missing = [str(p.relative_to(b)) for p in b.rglob("*") if p.is_file() and p.relative_to(b) not in set(files)]
    ok = codes == [0] * 14 and not differing and not missing and len(files) > 20
    record(10, ok, f"{len(files)} artifacts from 6 stages compared, {len(differing)} differ")
