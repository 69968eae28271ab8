import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_session
from jointpad.core import (
    REFERENCE_FRACTIONS,
    Dataset,
    Placement,
    Session,
    SessionFormatError,
    ValidationError,
    load_session,
    make_windows,
    normalize_minmax,
    partition,
    remove_outliers,
    resample_truth,
    save_session,
    session_to_csv,
    split_counts,
)


def _write(tmp_path, text, meta="eta_cm=0\nbeta_deg=0\n"):
    p = tmp_path / "s.csv"
    p.write_text(text)
    if meta is not None:
        (tmp_path / "s.meta").write_text(meta)
    return p


HEADER = "timestamp_ms,s1,s2,s3,s4,s5,s6\n"


def test_load_three_rows(tmp_path):
    rows = "".join(f"{20 * i},1,2,3,4,5,6\n" for i in range(3))
    s = load_session(_write(tmp_path, HEADER + rows))
    assert len(s) == 3
    assert s.truth is None
    assert s.readings.shape == (3, 6)


def test_reading_above_range_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_session(_write(tmp_path, HEADER + "0,1,2,3,4,5,1024\n"))


def test_malformed_row_reports_line(tmp_path):
    with pytest.raises(SessionFormatError) as err:
        load_session(_write(tmp_path, HEADER + "0,1,2,3,4,5,6\n20,1,2,x,4,5,6\n"))
    assert err.value.line == 3


def test_short_row_reports_line(tmp_path):
    with pytest.raises(SessionFormatError) as err:
        load_session(_write(tmp_path, HEADER + "0,1,2,3,4,5\n"))
    assert err.value.line == 2


def test_non_monotonic_timestamps(tmp_path):
    with pytest.raises(ValidationError):
        load_session(_write(tmp_path, HEADER + "0,1,2,3,4,5,6\n0,1,2,3,4,5,6\n"))


def test_bad_header(tmp_path):
    with pytest.raises(SessionFormatError):
        load_session(_write(tmp_path, "t,a,b\n0,1,2\n"))


def test_round_trip_is_byte_identical(tmp_path):
    s = make_session(40, seed=3, placement=Placement(-2.0, 135.0))
    path = save_session(s, tmp_path / "a.csv")
    loaded = load_session(path)
    np.testing.assert_array_equal(loaded.readings, s.readings)
    np.testing.assert_array_equal(loaded.truth, s.truth)
    assert loaded.placement == s.placement
    again = save_session(loaded, tmp_path / "b.csv")
    assert again.read_bytes() == path.read_bytes()
    assert (tmp_path / "b.meta").read_bytes() == (tmp_path / "a.meta").read_bytes()


def test_placement_validation():
    assert Placement(1.0, 370.0).beta == 10.0
    with pytest.raises(ValueError):
        Placement(4.5, 0.0)


def test_session_arrays_read_only(session):
    with pytest.raises(ValueError):
        session.readings[0, 0] = 1.0


def test_normalize_endpoints_and_linear_map():
    r = np.zeros((3, 6))
    r[:, 0] = [0, 1023, 0]
    r[:, 1] = [100, 300, 200]
    r[:, 2] = 512
    s = Session(Placement(0, 0), np.arange(3) * 20, r)
    out, stats = normalize_minmax(s)
    np.testing.assert_allclose(out.readings[:, 0], [0, 1, 0])
    np.testing.assert_allclose(out.readings[:, 1], [0, 1, 0.5])
    np.testing.assert_array_equal(out.readings[:, 2], [0.5] * 3)
    assert stats.degenerate[2] and not stats.degenerate[0]


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_normalize_range_and_idempotent(seed):
    s = make_session(30, seed=seed)
    once, _ = normalize_minmax(s)
    assert once.readings.min() >= 0 and once.readings.max() <= 1
    twice, _ = normalize_minmax(once)
    np.testing.assert_allclose(twice.readings, once.readings, atol=1e-12)


def test_outlier_spike_replaced_by_midpoint():
    x = np.sin(np.linspace(0, 6, 200)) * 10 + 500
    x[100] = x.mean() + 10 * x.std() * 3
    r = np.column_stack([x] * 6)
    s = Session(Placement(0, 0), np.arange(200) * 20, r)
    out = remove_outliers(s, 3.0).readings[:, 0]
    assert out[100] == pytest.approx(0.5 * (x[99] + x[101]))
    assert len(out) == 200
    np.testing.assert_array_equal(np.delete(out, 100), np.delete(x, 100))


def test_outliers_rare_on_clean_gaussian():
    rng = np.random.default_rng(0)
    r = rng.normal(500, 20, size=(20000, 6))
    s = Session(Placement(0, 0), np.arange(20000) * 20, r)
    changed = np.mean(remove_outliers(s).readings != r)
    assert changed <= 0.005


def test_outliers_constant_and_short_unchanged():
    s = Session(Placement(0, 0), np.arange(10) * 20, np.full((10, 6), 7.0))
    np.testing.assert_array_equal(remove_outliers(s).readings, s.readings)
    short = Session(Placement(0, 0), [0, 20], [[1.0] * 6, [900.0] * 6])
    np.testing.assert_array_equal(remove_outliers(short).readings, short.readings)


def test_resample_truth():
    assert resample_truth([0, 20], [100, 120], [10])[0] == pytest.approx(110)
    grid = np.arange(0, 1000, 20)
    vals = np.linspace(40, 180, grid.size)
    np.testing.assert_array_equal(resample_truth(grid, vals, grid), vals)
    t60 = np.arange(0, 10000, 1000 / 60)
    t50 = np.arange(0, 9980, 20)
    assert resample_truth(t60, np.ones_like(t60), t50).size == t50.size
    with pytest.raises(ValueError):
        resample_truth([0, 20], [1, 2], [30])


def test_windows():
    assert len(make_windows(make_session(30), 30)) == 1
    s = make_session(100)
    ws = make_windows(s, 30)
    assert len(ws) == 71
    for i, w in enumerate(ws):
        assert w.target == s.truth[i + 29]
        np.testing.assert_array_equal(w.values, s.readings[i : i + 30])
    assert make_windows(make_session(10), 30) == []


def _dataset(n_places):
    places = [Placement(0.0, 360.0 * k / n_places) for k in range(n_places)]
    return Dataset([make_session(5, placement=p) for p in places])


def test_partition_reference_counts():
    assert split_counts(639, REFERENCE_FRACTIONS) == [378, 126, 135]
    assert split_counts(3, (1 / 3, 1 / 3, 1 / 3)) == [1, 1, 1]


def test_partition_properties():
    d = _dataset(24)
    a = partition(d, (14 / 24, 2 / 24, 8 / 24), seed=5)
    b = partition(d, (14 / 24, 2 / 24, 8 / 24), seed=5)
    assert a.split == b.split
    assert set(a.split) == set(d.placements)
    counts = {n: sum(1 for v in a.split.values() if v == n) for n in ("train", "validate", "test")}
    assert counts == {"train": 14, "validate": 2, "test": 8}
    with pytest.raises(ValueError):
        partition(_dataset(2), REFERENCE_FRACTIONS)


@given(st.integers(3, 60), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_split_counts_sum(n, seed):
    rng = np.random.default_rng(seed)
    f = rng.dirichlet([1, 1, 1])
    f = f / f.sum()
    counts = split_counts(n, f)
    assert sum(counts) == n and min(counts) >= 1


def test_csv_is_canonical(session):
    text = session_to_csv(session)
    assert text.splitlines()[0] == "timestamp_ms,s1,s2,s3,s4,s5,s6,angle_deg"
    assert len(text.splitlines()) == len(session) + 1
