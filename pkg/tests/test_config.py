import pytest

from jointpad.config import ConfigError, dump_config, load_config


def _ini(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.smooth.ratio == 2.67
    assert cfg.transfer.eta_weight == 5e6
    assert cfg.entropy.r == 0.25 and cfg.entropy.m == 2


def test_fractions_and_types(tmp_path):
    cfg = load_config(_ini(tmp_path, "[split]\ntrain = 14/24\nvalidate = 2/24\ntest = 8/24\n[sim]\ntemplates = bend, walk\n"))
    assert cfg.split.train == pytest.approx(14 / 24)
    assert cfg.sim.templates == ("bend", "walk")


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nhiden = 4\n",
        "[modle]\nhidden = 4\n",
        "[model]\nhidden = four\n",
        "[split]\ntrain = 0.5\nvalidate = 0.5\ntest = 0.5\n",
        "[prep]\ncriterion = magic\n",
        "[prep]\nsensors = 7\n",
        "[transfer]\neta_weight = 0\n",
    ],
)
def test_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_ini(tmp_path, text))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")


def test_flags_win(tmp_path):
    cfg = load_config(_ini(tmp_path, "[run]\nseed = 3\n"), {"run": {"seed": 9}, "prep": {"sensors": None}})
    assert cfg.seed == 9 and cfg.prep.sensors == 6


def test_stage_hashes_track_their_sections():
    base = load_config()
    other_smooth = load_config(overrides={"smooth": {"ratio": "2"}})
    assert base.stage_hash("train") == other_smooth.stage_hash("train")
    assert base.stage_hash("predict") != other_smooth.stage_hash("predict")
    more_epochs = load_config(overrides={"model": {"epochs": "3"}})
    assert base.stage_hash("train") != more_epochs.stage_hash("train")
    assert base.stage_hash("apply") == more_epochs.stage_hash("apply")
    assert base.stage_hash("sim") == load_config(overrides={"prep": {"sensors": "3"}}).stage_hash("sim")


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides={"model": {"hidden": "8"}, "sim": {"d_beta": "90"}})
    again = load_config(_ini(tmp_path, dump_config(cfg)))
    assert again == cfg
    assert again.stage_hash("transfer") == cfg.stage_hash("transfer")


def test_sensor_subset():
    cfg = load_config(overrides={"prep": {"sensors": "3"}})
    assert cfg.prep_config().channels == (0, 2, 4)
    assert cfg.model_config().channels == 3
