import numpy as np
import pytest

from hyperenergy.data import (DEFAULT_FEATURES, EV_SPIKE_RATE, DataError, FeatureTable, TimeSeries, apply_scaler,
                              cache_prepared, chronological_split, data_hash, ev_session_count,
                              extract_calendar_features, fit_scaler, ingest_csv, invert_scaler, load_cached,
                              make_windows, prepare, synth_generate, write_csv)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- ingestion ----------------------------------------------------------------

def test_ingest_three_rows(tmp_path):
    p = write(tmp_path, "timestamp,consumption,temperature\n"
                        "2021-03-01T00:00,1.0,5\n2021-03-01T01:00,2.0,6\n2021-03-01T02:00,3.0,7\n")
    ts = ingest_csv(p)
    assert len(ts) == 3
    np.testing.assert_array_equal(ts.consumption, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ts.temperature, [5.0, 6.0, 7.0])


def test_ingest_duplicate_timestamp_named(tmp_path):
    p = write(tmp_path, "timestamp,consumption\n2021-03-01T00:00,1\n2021-03-01T01:00,2\n2021-03-01T01:00,3\n")
    with pytest.raises(DataError, match="2021-03-01T01:00"):
        ingest_csv(p)


def test_ingest_unsorted_rows_sorted(tmp_path):
    rows = ["2021-03-01T00:00,1", "2021-03-01T01:00,2", "2021-03-01T02:00,3", "2021-03-01T03:00,4"]
    a = ingest_csv(write(tmp_path, "timestamp,consumption\n" + "\n".join(rows) + "\n", "a.csv"))
    shuffled = [rows[i] for i in (2, 0, 3, 1)]
    b = ingest_csv(write(tmp_path, "timestamp,consumption\n" + "\n".join(shuffled) + "\n", "b.csv"))
    np.testing.assert_array_equal(a.timestamps, b.timestamps)
    np.testing.assert_array_equal(a.consumption, b.consumption)
    assert b.temperature is None


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "nope.csv")
    with pytest.raises(DataError, match="missing required column"):
        ingest_csv(write(tmp_path, "time,consumption\n2021-03-01T00:00,1\n"))
    with pytest.raises(DataError, match="negative"):
        ingest_csv(write(tmp_path, "timestamp,consumption\n2021-03-01T00:00,-1\n"))
    gap = "timestamp,consumption\n2021-03-01T00:00,1\n2021-03-01T03:00,2\n"
    with pytest.raises(DataError, match="non-hourly"):
        ingest_csv(write(tmp_path, gap))
    with pytest.raises(DataError):
        ingest_csv(write(tmp_path, "timestamp,consumption\nnot-a-date,1\n"))


def test_ingest_forward_fill_and_column_map(tmp_path):
    p = write(tmp_path, "time,kwh\n2021-03-01 00:00,1\n2021-03-01 03:00,2\n")
    ts = ingest_csv(p, {"timestamp": "time", "consumption": "kwh"}, fill_gaps=2)
    np.testing.assert_array_equal(ts.consumption, [1, 1, 1, 2])
    with pytest.raises(DataError):
        ingest_csv(p, {"timestamp": "time", "consumption": "kwh"}, fill_gaps=1)


def test_write_ingest_round_trip(tmp_path):
    ts = synth_generate("office", 5, seed=2)
    back = ingest_csv(write_csv(ts, tmp_path / "o.csv"))
    np.testing.assert_array_equal(back.timestamps, ts.timestamps)
    np.testing.assert_allclose(back.consumption, ts.consumption, atol=1e-6)


def test_timeseries_invariants():
    t = np.datetime64("2021-01-01T00", "h") + np.arange(3) * np.timedelta64(1, "h")
    with pytest.raises(DataError):
        TimeSeries(t, [1.0, 2.0])
    with pytest.raises(DataError):
        TimeSeries(t[::-1], [1.0, 2.0, 3.0])


# --- calendar features ----------------------------------------------------------

def one(stamp):
    return TimeSeries(np.array([stamp], dtype="datetime64[h]"), [1.0], [0.0])


def test_calendar_facts():
    ft = extract_calendar_features(one("2021-03-01T13"), ("consumption", "day_of_week", "hour_of_day",
                                                           "day_of_month", "day_of_year"))
    assert ft.values[0].tolist() == [1.0, 0.0, 13.0, 1.0, 60.0]
    leap = extract_calendar_features(one("2020-12-31T00"), ("consumption", "day_of_year"))
    assert leap.column("day_of_year")[0] == 366


def test_feature_subset_and_ranges():
    ts = synth_generate("detached", 400, seed=0)
    full = extract_calendar_features(ts, DEFAULT_FEATURES)
    assert full.num_features == 5
    reduced = extract_calendar_features(ts, [f for f in DEFAULT_FEATURES if f != "temperature"])
    assert reduced.num_features == 4 and "temperature" not in reduced.names
    assert full.column("day_of_week").min() == 0 and full.column("day_of_week").max() == 6
    assert full.column("hour_of_day").min() == 0 and full.column("hour_of_day").max() == 23
    assert 1 <= full.column("day_of_year").min() and full.column("day_of_year").max() <= 366
    with pytest.raises(DataError):
        extract_calendar_features(ts, ("temperature",))


# --- split / scale / windows --------------------------------------------------

def table(L, k=2):
    t = np.datetime64("2021-01-01T00", "h") + np.arange(L) * np.timedelta64(1, "h")
    return FeatureTable(t, ("consumption", "temperature")[:k], np.arange(L * k, dtype=float).reshape(L, k))


def test_split_sizes_and_partition():
    tr, va, te = chronological_split(table(1000))
    assert (len(tr), len(va), len(te)) == (600, 200, 200)
    np.testing.assert_array_equal(np.concatenate([tr.values, va.values, te.values]), table(1000).values)
    with pytest.raises(DataError):
        chronological_split(table(10), min_length=48)
    with pytest.raises(ValueError):
        chronological_split(table(100), 0.5, 0.2, 0.2)


def test_scaler_examples():
    sc = fit_scaler(FeatureTable(np.arange(3).astype("datetime64[h]"), ("consumption",),
                                 np.array([[0.0], [5.0], [10.0]])))
    np.testing.assert_array_equal(sc.transform(np.array([[0.0], [5.0], [10.0]]))[:, 0], [0, 0.5, 1])
    assert sc.transform(np.array([[20.0]]))[0, 0] == 2.0
    const = fit_scaler(FeatureTable(np.arange(3).astype("datetime64[h]"), ("consumption",), np.full((3, 1), 4.0)))
    assert np.all(const.transform(np.array([[4.0], [9.0]])) == 0)


def test_scaler_round_trip():
    rng = np.random.default_rng(0)
    tab = table(50)
    tab.values = rng.normal(size=(50, 2)) * 100
    sc = fit_scaler(tab)
    back = invert_scaler(apply_scaler(tab, sc), sc)
    np.testing.assert_allclose(back.values, tab.values, rtol=0, atol=1e-12)


def test_window_counts_and_indexing():
    assert len(make_windows(table(100), 24, 1, 24)) == 53
    assert len(make_windows(table(48), 24, 1, 24)) == 1
    assert len(make_windows(table(100), 24, 5, 24)) == 11
    ds = make_windows(table(100), 24, 1, 24)
    np.testing.assert_array_equal(ds.targets[0], table(100).values[24:48, 0])
    np.testing.assert_array_equal(ds.inputs[3], table(100).values[3:27])
    assert np.all(ds.target_times[:, 0] - ds.input_times[:, -1] == np.timedelta64(1, "h"))
    with pytest.raises(DataError):
        make_windows(table(47), 24, 1, 24)


def test_prepare_windows_stay_inside_splits():
    data = prepare(synth_generate("townhouse", 30, seed=0))
    assert data.train.inputs.shape[1:] == (24, 5) and data.train.targets.shape[1] == 24
    assert data.train.target_times.max() < data.val.input_times.min()
    assert data.val.target_times.max() < data.test.input_times.min()
    L = 30 * 24
    assert len(data.train) == int(0.6 * L) - 47 and len(data.test) == L - int(0.8 * L) - 47


def test_train_stride_leaves_eval_splits_untouched():
    ts = synth_generate("townhouse", 30, seed=0)
    full, sub = prepare(ts), prepare(ts, train_stride=4)
    np.testing.assert_array_equal(sub.train.inputs, full.train.inputs[::4])
    np.testing.assert_array_equal(sub.test.inputs, full.test.inputs)
    np.testing.assert_array_equal(sub.val.targets, full.val.targets)


def test_scaler_ignores_test_split():
    ts = synth_generate("detached", 60, seed=4)
    base = prepare(ts).scaler
    rng = np.random.default_rng(0)
    L = len(ts)
    for _ in range(5):
        mutated = TimeSeries(ts.timestamps, ts.consumption.copy(), ts.temperature.copy())
        i = int(rng.integers(int(0.8 * L), L))
        mutated.consumption[i] = 1e6
        mutated.temperature[i] = -80.0
        sc = prepare(mutated).scaler
        assert np.array_equal(sc.minimum, base.minimum) and np.array_equal(sc.maximum, base.maximum)


def test_cache_round_trip_and_invalidation(tmp_path):
    ts = synth_generate("townhouse", 20, seed=1)
    data = prepare(ts)
    key = data_hash(ts, {"window": 24})
    path = cache_prepared(data, tmp_path / "c.npz", key)
    back = load_cached(path, key)
    np.testing.assert_array_equal(back.test.inputs, data.test.inputs)
    np.testing.assert_array_equal(back.scaler.maximum, data.scaler.maximum)
    assert load_cached(path, data_hash(ts, {"window": 12})) is None


# --- synthetic generator ------------------------------------------------------

def test_synth_determinism_and_profiles():
    a, b = synth_generate("ev_home", 30, seed=5), synth_generate("ev_home", 30, seed=5)
    np.testing.assert_array_equal(a.consumption, b.consumption)
    assert not np.array_equal(a.consumption, synth_generate("ev_home", 30, seed=6).consumption)
    for p in ("residence", "detached", "ev_home", "townhouse", "office"):
        ts = synth_generate(p, 10, seed=0)
        assert len(ts) == 240 and np.all(ts.consumption >= 0)
    with pytest.raises(ValueError):
        synth_generate("castle", 10)
    with pytest.raises(ValueError):
        synth_generate("office", 3)


@pytest.mark.parametrize("profile", ["detached", "townhouse", "office"])
def test_noise_free_event_free_is_weekly_periodic(profile):
    ts = synth_generate(profile, 28, seed=0, noise=0.0, events=False, seasonal=False)
    c = ts.consumption
    np.testing.assert_allclose(c[168:], c[:-168], rtol=0, atol=1e-12)
    assert not np.allclose(c[24:], c[:-24])


def test_ev_session_count_within_three_sigma():
    mean = 365 * EV_SPIKE_RATE
    sigma = np.sqrt(mean)
    counts = np.array([ev_session_count(365, s) for s in range(300)])
    assert np.mean(np.abs(counts - mean) <= 3 * sigma) > 0.99
    assert counts.mean() == pytest.approx(mean, abs=3 * sigma / np.sqrt(len(counts)))
    # spikes actually appear in the series
    ts = synth_generate("ev_home", 60, seed=0, noise=0.0)
    calm = synth_generate("ev_home", 60, seed=0, noise=0.0, events=False)
    assert np.sum(ts.consumption > calm.consumption + 1e-9) > 0
