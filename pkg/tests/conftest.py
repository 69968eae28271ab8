import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jointpad.core import Placement, Session  # noqa: E402


def make_session(n=50, seed=0, placement=Placement(0.0, 0.0), truth=True, channels=6):
    rng = np.random.default_rng(seed)
    readings = rng.uniform(100, 900, size=(n, channels))
    angles = np.linspace(60, 170, n) if truth else None
    return Session(placement, np.arange(n, dtype=np.int64) * 20, readings, angles)


@pytest.fixture
def session():
    return make_session()


SMALL_INI = """\
[sim]
d_eta = 4
d_beta = 90
duration = 6

[model]
hidden = 8
epochs = 2

[split]
train = 6/12
validate = 2/12
test = 4/12

[transfer]
epochs = 1
"""


def run_cli(*argv):
    from jointpad.cli import main

    return main([str(a) for a in argv])


def run_pipeline(root: Path, ini: Path, extra=()):
    """sim -> rank -> train -> transfer -> predict -> evaluate in ``root``; returns exit codes."""
    cfg = ("--config", ini, *extra)
    codes = [
        run_cli("sim", "gen", "--out", root / "data", *cfg),
        run_cli("sim", "gen", "--out", root / "user", "--profile-seed", 7, "--noise-scale", 12, *cfg, "--force"),
        run_cli("rank", "--data", root / "data", "--out", root / "rank.csv", *cfg),
        run_cli("train", "--data", root / "data", "--out", root / "model.ckpt", *cfg),
    ]
    target = sorted((root / "user" / "sessions").glob("*.csv"))[0]
    codes += [
        run_cli("transfer", "--model", root / "model.ckpt", "--source", root / "data", "--target", target,
                "--out", root / "model_t.ckpt", *cfg),
        run_cli("predict", "--model", root / "model_t.ckpt", "--session", target, "--out", root / "pred.csv",
                "--smooth", *cfg),
        run_cli("evaluate", "--model", root / "model.ckpt", "--data", root / "data", "--out", root / "eval",
                "--smooth", "--json", *cfg),
    ]
    return codes


@pytest.fixture
def small_ini(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_INI)
    return p


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
