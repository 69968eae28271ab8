import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_session
from jointpad.core import normalize_minmax
from jointpad.entropy import (
    EntropyConfig,
    fuzzy_entropy,
    jitter_criterion,
    rank_channels,
    rank_readings,
    ranking_from_scores,
    sd_criterion,
)
from oracles import fuzzy_entropy_loops


def test_constant_series_is_zero():
    assert fuzzy_entropy([5.0] * 20) == 0.0


def test_matches_loop_oracle_uniform_noise():
    x = np.random.default_rng(42).uniform(0, 1, 50)
    assert fuzzy_entropy(x) == pytest.approx(fuzzy_entropy_loops(x, 2, 0.25), abs=1e-9)


@given(
    st.integers(0, 2**32 - 1),
    st.integers(6, 50),
    st.sampled_from([1, 2]),
    st.sampled_from([0.1, 0.25]),
)
@settings(max_examples=40, deadline=None)
def test_matches_loop_oracle(seed, n, m, r):
    x = np.random.default_rng(seed).uniform(0, 1, n)
    got = fuzzy_entropy(x, EntropyConfig(m=m, r=r))
    assert got == pytest.approx(fuzzy_entropy_loops(x, m, r), abs=1e-9)


def test_offset_invariance():
    x = np.random.default_rng(1).normal(0, 0.2, 80)
    assert fuzzy_entropy(x + 3.7) == pytest.approx(fuzzy_entropy(x), abs=1e-9)


def test_noise_above_sine():
    wins = 0
    t = np.arange(100)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        sine = np.sin(2 * np.pi * t / 25 + rng.uniform(0, 6))
        noise = rng.normal(0, 1, 100)
        noise = noise / noise.std() * sine.std()
        wins += fuzzy_entropy(noise) > fuzzy_entropy(sine)
    assert wins >= 9


def test_too_short_and_bad_config():
    with pytest.raises(ValueError):
        fuzzy_entropy([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        EntropyConfig(r=0)


def test_r_times_sd_and_literal_power():
    x = np.random.default_rng(3).uniform(0, 1, 30)
    scaled = fuzzy_entropy(x, EntropyConfig(r_times_sd=True))
    assert scaled == pytest.approx(fuzzy_entropy_loops(x, 2, 0.25 * x.std()), abs=1e-9)
    literal = fuzzy_entropy(x, EntropyConfig(power_is_length=True))
    assert literal == pytest.approx(fuzzy_entropy_loops(x, 2, 0.25, power=30), abs=1e-9)


def test_sd_and_jitter():
    assert sd_criterion([3.0] * 10) == 0.0
    assert jitter_criterion([3.0] * 10) == 0.0
    assert sd_criterion([0, 1, 0, 1]) == pytest.approx(0.5)
    for dt in (1.0, 0.02, 0.5):
        t = np.arange(20) * dt
        assert jitter_criterion(t**3, dt) == pytest.approx(6.0, rel=1e-6)
    with pytest.raises(ValueError):
        jitter_criterion([1, 2, 3])


def test_ranking_order():
    r = ranking_from_scores([0.9, 0.1, 0.5, 0.3, 0.7, 0.2])
    assert r.order == (1, 5, 3, 2, 4, 0)
    assert r.top2 == {1, 5}
    assert ranking_from_scores([1, 2, 3, 4, 5, 6]).order == tuple(range(6))
    assert ranking_from_scores([1, 1, 0, 0, 2, 2]).order == (2, 3, 0, 1, 4, 5)
    assert ranking_from_scores([1, 2, 3], descending=True).order == (2, 1, 0)
    assert ranking_from_scores([3, 1, 2], tag="none").order == (0, 1, 2)


@given(st.permutations(range(6)), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_ranking_absorbs_channel_permutation(perm, seed):
    rng = np.random.default_rng(seed)
    # distinct smoothness per channel so there are no ties
    t = np.linspace(0, 1, 120)
    r = np.column_stack([np.sin(2 * np.pi * t * 2) + rng.normal(0, 0.05 * (k + 1), t.size) for k in range(6)])
    ranked, _ = rank_readings(r)
    ranked_p, _ = rank_readings(r[:, list(perm)])
    np.testing.assert_array_equal(ranked, ranked_p)


def test_unnormalised_input_is_infinite_not_nan():
    x = np.random.default_rng(0).uniform(100, 900, 60)
    assert fuzzy_entropy(x) == np.inf


def test_rank_channels_reorders_session():
    s, _ = normalize_minmax(make_session(80, seed=2))
    ranked, ranking = rank_channels(s)
    np.testing.assert_array_equal(ranked.readings, s.readings[:, list(ranking.order)])
    ents = np.array(ranking.entropies)[list(ranking.order)]
    assert np.all(np.diff(ents) >= 0)
