"""Hourly consumption ingestion, calendar features, chronological splits,
min-max scaling, sliding windows and synthetic consumer profiles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .storage import write_npz

HOUR = np.timedelta64(1, "h")

ALL_FEATURES = ("consumption", "temperature", "day_of_year", "day_of_month", "day_of_week", "hour_of_day")
DEFAULT_FEATURES = ("consumption", "temperature", "hour_of_day", "day_of_week", "day_of_year")
PROFILES = ("residence", "detached", "ev_home", "townhouse", "office")

CSV_COLUMNS = ("timestamp", "consumption", "temperature")


class DataError(ValueError):
    """Input data is malformed or insufficient."""


@dataclass
class TimeSeries:
    timestamps: np.ndarray  # datetime64[h]
    consumption: np.ndarray
    temperature: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.consumption = np.asarray(self.consumption, dtype=float)
        if self.temperature is not None:
            self.temperature = np.asarray(self.temperature, dtype=float)
            if len(self.temperature) != len(self.timestamps):
                raise DataError("temperature length differs from timestamps")
        if len(self.consumption) != len(self.timestamps):
            raise DataError("consumption length differs from timestamps")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "h")):
            raise DataError("timestamps must be strictly increasing")
        if np.any(self.consumption < 0):
            raise DataError("consumption must be non-negative")

    def __len__(self) -> int:
        return len(self.timestamps)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "timestamp": pd.to_datetime(self.timestamps).strftime("%Y-%m-%dT%H:%M:%S"),
            "consumption": self.consumption,
        })
        if self.temperature is not None:
            df["temperature"] = self.temperature
        return df


def write_csv(ts: TimeSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ts.to_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    return path


def ingest_csv(path, column_map: dict[str, str] | None = None, *, timestamp_format: str | None = None,
               fill_gaps: int = 0) -> TimeSeries:
    """Load an hourly CSV.

    ``column_map`` maps canonical names (timestamp, consumption, temperature) to
    the file's headers. Gaps are rejected unless ``fill_gaps`` > 0, in which case
    runs of up to that many missing hours are forward-filled.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    cmap = {name: name for name in CSV_COLUMNS}
    cmap.update(column_map or {})
    df = pd.read_csv(path)
    for req in ("timestamp", "consumption"):
        if cmap[req] not in df.columns:
            raise DataError(f"missing required column {cmap[req]!r} in {path}")
    try:
        stamps = pd.to_datetime(df[cmap["timestamp"]], format=timestamp_format)
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamps in {path}: {exc}") from exc
    has_temp = cmap["temperature"] in df.columns
    frame = pd.DataFrame({"timestamp": stamps.values.astype("datetime64[h]"),
                          "consumption": df[cmap["consumption"]].astype(float).values})
    if has_temp:
        frame["temperature"] = df[cmap["temperature"]].astype(float).values
    dup = frame["timestamp"][frame["timestamp"].duplicated()]
    if len(dup):
        raise DataError(f"duplicate timestamp {pd.Timestamp(dup.iloc[0]).isoformat()}")
    frame = frame.sort_values("timestamp", kind="stable").reset_index(drop=True)
    if (frame["consumption"] < 0).any():
        bad = frame.loc[frame["consumption"] < 0, "timestamp"].iloc[0]
        raise DataError(f"negative consumption at {pd.Timestamp(bad).isoformat()}")
    if frame[["consumption"] + (["temperature"] if has_temp else [])].isna().any().any():
        raise DataError("missing values in data columns")

    ts = frame["timestamp"].values.astype("datetime64[h]")
    steps = np.diff(ts) / HOUR
    if len(steps) and np.any(steps != 1):
        worst = int(steps.max())
        if fill_gaps <= 0 or worst - 1 > fill_gaps:
            pos = int(np.argmax(steps != 1))
            raise DataError(f"non-hourly spacing after {pd.Timestamp(ts[pos]).isoformat()} "
                            f"({int(steps[pos])} h); gap policy allows {fill_gaps} missing hours")
        full = np.arange(ts[0], ts[-1] + HOUR, HOUR)
        frame = frame.set_index("timestamp").reindex(full).ffill()
        frame.index.name = "timestamp"
        frame = frame.reset_index()
        ts = full
    return TimeSeries(ts, frame["consumption"].values,
                      frame["temperature"].values if has_temp else None)


# ----------------------------------------------------------------------------
# features

@dataclass
class FeatureTable:
    timestamps: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray  # [L, k]

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def num_features(self) -> int:
        return len(self.names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def slice(self, start: int, end: int) -> "FeatureTable":
        return FeatureTable(self.timestamps[start:end], self.names, self.values[start:end])


def extract_calendar_features(ts: TimeSeries, feature_set: Sequence[str] = DEFAULT_FEATURES) -> FeatureTable:
    if len(ts) == 0:
        raise DataError("empty series")
    feature_set = tuple(feature_set)
    unknown = set(feature_set) - set(ALL_FEATURES)
    if unknown:
        raise DataError(f"unknown features {sorted(unknown)}")
    if "consumption" not in feature_set:
        raise DataError("feature set must include consumption")
    idx = pd.DatetimeIndex(ts.timestamps.astype("datetime64[ns]"))
    cols = {
        "consumption": ts.consumption,
        "day_of_year": idx.dayofyear.values,
        "day_of_month": idx.day.values,
        "day_of_week": idx.dayofweek.values,
        "hour_of_day": idx.hour.values,
    }
    if "temperature" in feature_set:
        if ts.temperature is None:
            raise DataError("temperature requested but the series has no temperature column")
        cols["temperature"] = ts.temperature
    values = np.column_stack([np.asarray(cols[name], dtype=float) for name in feature_set])
    return FeatureTable(ts.timestamps.copy(), feature_set, values)


def chronological_split(table: FeatureTable, train: float = 0.6, val: float = 0.2, test: float = 0.2,
                        min_length: int = 48) -> tuple[FeatureTable, FeatureTable, FeatureTable]:
    """Contiguous split at ``floor(train*L)`` and ``floor((train+val)*L)``.

    Each part must hold at least ``min_length`` rows (one window plus horizon).
    """
    if abs(train + val + test - 1.0) > 1e-9 or min(train, val, test) <= 0:
        raise ValueError("split ratios must be positive and sum to 1")
    L = len(table)
    a = int(np.floor(train * L))
    b = int(np.floor((train + val) * L))
    parts = (table.slice(0, a), table.slice(a, b), table.slice(b, L))
    for name, part in zip(("train", "validation", "test"), parts):
        if len(part) < min_length:
            raise DataError(f"{name} split has {len(part)} rows; need at least {min_length} "
                            f"(series length {L})")
    return parts


@dataclass
class MinMaxScaler:
    minimum: np.ndarray
    maximum: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, values: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        out = (np.asarray(values, dtype=float) - self.minimum) / safe
        # constant features map to 0
        return np.where(span > 0, out, 0.0)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.span + self.minimum

    def transform_column(self, values: np.ndarray, col: int) -> np.ndarray:
        span = self.span[col]
        if span <= 0:
            return np.zeros_like(np.asarray(values, dtype=float))
        return (np.asarray(values, dtype=float) - self.minimum[col]) / span

    def inverse_column(self, values: np.ndarray, col: int) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.span[col] + self.minimum[col]

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.array(d["minimum"], dtype=float), np.array(d["maximum"], dtype=float), tuple(d["names"]))


def fit_scaler(train: FeatureTable) -> MinMaxScaler:
    if len(train) == 0:
        raise DataError("cannot fit a scaler on an empty training split")
    return MinMaxScaler(train.values.min(axis=0), train.values.max(axis=0), train.names)


def apply_scaler(table: FeatureTable, scaler: MinMaxScaler) -> FeatureTable:
    return FeatureTable(table.timestamps, table.names, scaler.transform(table.values))


def invert_scaler(table: FeatureTable, scaler: MinMaxScaler) -> FeatureTable:
    return FeatureTable(table.timestamps, table.names, scaler.inverse(table.values))


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # [M, n, k]
    targets: np.ndarray  # [M, h]
    input_times: np.ndarray  # [M, n]
    target_times: np.ndarray  # [M, h]
    scaler: MinMaxScaler | None = None
    split: str = "train"
    target_col: int = 0

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def window(self) -> int:
        return self.inputs.shape[1]

    @property
    def horizon(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.inputs[idx], self.targets[idx], self.input_times[idx],
                               self.target_times[idx], self.scaler, self.split, self.target_col)


def make_windows(table: FeatureTable, n: int = 24, stride: int = 1, h: int = 24,
                 target: str = "consumption", scaler: MinMaxScaler | None = None,
                 split: str = "train") -> WindowedDataset:
    """Sliding windows; ``M = (L - n - h) // stride + 1``."""
    if n < 1 or h < 1 or stride < 1:
        raise ValueError("n, h and stride must be >= 1")
    L = len(table)
    if L < n + h:
        raise DataError(f"table of length {L} is shorter than window + horizon = {n + h}")
    M = (L - n - h) // stride + 1
    starts = np.arange(M) * stride
    in_idx = starts[:, None] + np.arange(n)[None, :]
    tg_idx = starts[:, None] + n + np.arange(h)[None, :]
    col = table.names.index(target)
    return WindowedDataset(
        inputs=table.values[in_idx],
        targets=table.values[:, col][tg_idx],
        input_times=table.timestamps[in_idx],
        target_times=table.timestamps[tg_idx],
        scaler=scaler,
        split=split,
        target_col=col,
    )


@dataclass
class PreparedData:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    scaler: MinMaxScaler
    feature_names: tuple[str, ...]
    meta: dict = field(default_factory=dict)


def prepare(ts: TimeSeries, feature_set: Sequence[str] = DEFAULT_FEATURES, window: int = 24,
            horizon: int = 24, stride: int = 1, ratios=(0.6, 0.2, 0.2),
            train_stride: int = 1) -> PreparedData:
    """Features -> split -> scaler fitted on train -> per-split windows.

    ``train_stride`` keeps every k-th training window only; validation and
    test windows are untouched.
    """
    if train_stride < 1:
        raise ValueError("train_stride must be >= 1")
    table = extract_calendar_features(ts, feature_set)
    tr, va, te = chronological_split(table, *ratios, min_length=window + horizon)
    scaler = fit_scaler(tr)
    sets = [make_windows(apply_scaler(part, scaler), window, stride, horizon, scaler=scaler, split=name)
            for part, name in zip((tr, va, te), ("train", "val", "test"))]
    if train_stride > 1:
        sets[0] = sets[0].subset(np.arange(0, len(sets[0]), train_stride))
    return PreparedData(*sets, scaler=scaler, feature_names=tuple(feature_set),
                        meta={"window": window, "horizon": horizon, "stride": stride, "train_stride": train_stride,
                              "rows": len(table)})


def data_hash(ts: TimeSeries, config: dict) -> str:
    h = hashlib.sha256()
    h.update(ts.timestamps.astype("int64").tobytes())
    h.update(ts.consumption.tobytes())
    if ts.temperature is not None:
        h.update(ts.temperature.tobytes())
    h.update(json.dumps(config, sort_keys=True).encode())
    return h.hexdigest()[:16]


def cache_prepared(data: PreparedData, path, key: str) -> Path:
    """Store a prepared dataset in an ``.npz`` container tagged with ``key``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"__key__": np.frombuffer(key.encode(), dtype=np.uint8),
              "__meta__": np.frombuffer(json.dumps({
                  "scaler": data.scaler.to_dict(), "features": list(data.feature_names),
                  "meta": data.meta}).encode(), dtype=np.uint8)}
    for name in ("train", "val", "test"):
        ds = getattr(data, name)
        arrays[f"{name}/inputs"] = ds.inputs
        arrays[f"{name}/targets"] = ds.targets
        arrays[f"{name}/input_times"] = ds.input_times.astype("int64")
        arrays[f"{name}/target_times"] = ds.target_times.astype("int64")
        arrays[f"{name}/target_col"] = np.array(ds.target_col)
    return write_npz(path, arrays)


def load_cached(path, key: str) -> PreparedData | None:
    """Return the cached dataset, or ``None`` if absent or stale."""
    path = Path(path)
    if not path.is_file():
        return None
    with np.load(path, allow_pickle=False) as z:
        if bytes(z["__key__"]).decode() != key:
            return None
        meta = json.loads(bytes(z["__meta__"]).decode())
        scaler = MinMaxScaler.from_dict(meta["scaler"])
        sets = []
        for name in ("train", "val", "test"):
            sets.append(WindowedDataset(
                z[f"{name}/inputs"].copy(), z[f"{name}/targets"].copy(),
                z[f"{name}/input_times"].astype("datetime64[h]"),
                z[f"{name}/target_times"].astype("datetime64[h]"),
                scaler, name, int(z[f"{name}/target_col"])))
    return PreparedData(*sets, scaler=scaler, feature_names=tuple(meta["features"]), meta=meta["meta"])


# ----------------------------------------------------------------------------
# synthetic consumers

_PROFILE_SHAPES = {
    # base kWh, daily amplitude, weekend factor, temperature coefficient, event rate per day
    "residence": dict(base=220.0, daily=60.0, weekend=0.9, temp_coef=2.5, events=0.0),
    "detached": dict(base=1.2, daily=0.6, weekend=1.15, temp_coef=0.04, events=0.0),
    "ev_home": dict(base=1.3, daily=0.6, weekend=1.1, temp_coef=0.04, events=0.6),
    "townhouse": dict(base=0.9, daily=0.4, weekend=1.1, temp_coef=0.03, events=0.0),
    "office": dict(base=80.0, daily=50.0, weekend=0.45, temp_coef=1.5, events=0.0),
}
EV_SPIKE_RATE = _PROFILE_SHAPES["ev_home"]["events"]


def _temperature(hours: np.ndarray, noise: float, rng: np.random.Generator,
                 seasonal: bool = True) -> np.ndarray:
    """Seasonal + diurnal temperature in degrees C; ``hours`` counted from Jan 1."""
    day = hours / 24.0
    annual = 8.0 - 14.0 * np.cos(2 * np.pi * (day - 15.0) / 365.0) if seasonal else 8.0
    diurnal = 4.0 * np.sin(2 * np.pi * ((hours % 24) - 9.0) / 24.0)
    temp = annual + diurnal
    if noise > 0:
        temp = temp + rng.normal(0.0, 2.0 * noise, size=len(hours))
    return temp


def synth_generate(profile: str, days: int, seed: int = 0, noise: float = 0.05,
                   start: str = "2021-01-04T00", events: bool = True,
                   seasonal: bool = True) -> TimeSeries:
    """Synthetic hourly consumer profile.

    Daily sinusoid, weekday/weekend modulation, a temperature-driven
    heating/cooling load, profile-specific events (EV charging spikes, term-break
    level shifts for residences) and multiplicative Gaussian noise of relative
    size ``noise``. ``seasonal=False`` removes the annual temperature cycle, so
    a noise-free, event-free series repeats every 168 h.
    """
    if profile not in _PROFILE_SHAPES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if days < 4:
        raise ValueError("days must be >= 4")
    shape = _PROFILE_SHAPES[profile]
    L = days * 24
    stamps = np.datetime64(start, "h") + np.arange(L) * HOUR
    year_start = stamps.astype("datetime64[Y]").astype("datetime64[h]")
    hour_of_year = ((stamps - year_start) / HOUR).astype(float)
    temp = _temperature(hour_of_year, noise, np.random.default_rng([seed, 0]), seasonal)
    load = _weekly_pattern(stamps, shape)
    # heating below 16 C, cooling above 22 C
    load = load + shape["temp_coef"] * (np.clip(16.0 - temp, 0, None) + 0.6 * np.clip(temp - 22.0, 0, None))
    if events and profile == "residence":
        load = load * _term_breaks(stamps)
    if events and shape["events"] > 0:
        load = load + _ev_spikes(L, shape["events"], shape["base"], np.random.default_rng([seed, 1]))[0]
    if noise > 0:
        load = load * (1.0 + np.random.default_rng([seed, 2]).normal(0.0, noise, size=L))
    return TimeSeries(stamps, np.clip(load, 0.0, None), np.round(temp, 3))


def _weekly_pattern(stamps: np.ndarray, shape: dict) -> np.ndarray:
    idx = pd.DatetimeIndex(stamps.astype("datetime64[ns]"))
    hour = idx.hour.values.astype(float)
    dow = idx.dayofweek.values
    daily = np.sin(2 * np.pi * (hour - 8.0) / 24.0) + 0.35 * np.sin(4 * np.pi * (hour - 5.0) / 24.0)
    weekly = np.where(dow >= 5, shape["weekend"], 1.0)
    return (shape["base"] + shape["daily"] * daily) * weekly


def _term_breaks(stamps: np.ndarray) -> np.ndarray:
    idx = pd.DatetimeIndex(stamps.astype("datetime64[ns]"))
    month, day = idx.month.values, idx.day.values
    summer = (month >= 5) & (month <= 8)
    winter = ((month == 12) & (day >= 20)) | ((month == 1) & (day <= 5))
    reading = (month == 2) & (day >= 15) & (day <= 22)
    factor = np.ones(len(stamps))
    factor[summer] = 0.7
    factor[winter] = 0.55
    factor[reading] = 0.8
    return factor


def _ev_spikes(L: int, rate: float, base: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Poisson(rate) evening charging sessions per day, each 2-4 h at 3x base load."""
    extra = np.zeros(L)
    counts = rng.poisson(rate, size=L // 24)
    for d, cnt in enumerate(counts):
        for _ in range(cnt):
            begin = d * 24 + int(rng.integers(17, 23))
            dur = int(rng.integers(2, 5))
            extra[begin:min(begin + dur, L)] += 3.0 * base
    return extra, int(counts.sum())


def ev_session_count(days: int, seed: int) -> int:
    """Charging sessions that ``synth_generate("ev_home", days, seed)`` places."""
    shape = _PROFILE_SHAPES["ev_home"]
    return _ev_spikes(days * 24, shape["events"], shape["base"], np.random.default_rng([seed, 1]))[1]


def synth_sinusoid(days: int, base: float = 10.0, amplitude: float = 4.0,
                   start: str = "2021-01-04T00") -> TimeSeries:
    """Noise-free daily sinusoid with a constant temperature column."""
    L = days * 24
    stamps = np.datetime64(start, "h") + np.arange(L) * HOUR
    hours = np.arange(L) % 24
    load = base + amplitude * np.sin(2 * np.pi * hours / 24.0)
    return TimeSeries(stamps, load, np.full(L, 15.0))
