"""YAML run configuration: data source, variant, training, grid and ablation sections."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .data import ALL_FEATURES, DEFAULT_FEATURES, PROFILES, PreparedData, TimeSeries, ingest_csv, prepare, \
    synth_generate
from .evaluation import canonical_variant
from .gridsearch import TABLE_II_SPACE
from .training import TrainConfig, config_hash


class ConfigError(ValueError):
    """The run configuration is malformed."""


def _check_keys(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        where = f"{section}." if section else ""
        raise ConfigError(f"unknown config key: {', '.join(where + k for k in unknown)}")


@dataclass
class SynthSpec:
    profile: str = "residence"
    days: int = 730
    noise: float = 0.05

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"data.synth.profile must be one of {PROFILES}, got {self.profile!r}")
        if int(self.days) < 4:
            raise ConfigError("data.synth.days must be >= 4")
        if self.noise < 0:
            raise ConfigError("data.synth.noise must be >= 0")


@dataclass
class DataSpec:
    path: str | None = None
    synth: SynthSpec | None = None
    features: tuple = DEFAULT_FEATURES
    window: int = 24
    horizon: int = 24
    stride: int = 1
    train_stride: int = 1
    fill_gaps: int = 0
    column_map: dict = field(default_factory=dict)
    timestamp_format: str | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigError("data needs exactly one of 'path' or 'synth'")
        self.features = tuple(self.features)
        bad = [f for f in self.features if f not in ALL_FEATURES]
        if bad:
            raise ConfigError(f"data.features: unknown feature(s) {bad}; choose from {ALL_FEATURES}")
        if not self.features or self.features[0] != "consumption":
            raise ConfigError("data.features must start with 'consumption'")
        for name in ("window", "horizon", "stride", "train_stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"data.{name} must be >= 1")
        if not 0 <= int(self.fill_gaps) <= 3:
            raise ConfigError("data.fill_gaps must lie in [0, 3]")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["features"] = list(self.features)
        d["synth"] = None if self.synth is None else vars(self.synth).copy()
        return d


@dataclass
class GridSpec:
    space: dict = field(default_factory=lambda: {k: list(v) for k, v in TABLE_II_SPACE.items()})
    budget: int | None = None


@dataclass
class AblationSpec:
    variants: list = field(default_factory=lambda: ["full", "no_kernel", "plain_lstm"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class RunConfig:
    data: DataSpec
    train: TrainConfig
    variant: str = "hyperenergy_full"
    seed: int = 0
    output_dir: str = "runs/default"
    grid: GridSpec = field(default_factory=GridSpec)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    source: str | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "variant": self.variant, "output_dir": self.output_dir,
                "data": self.data.to_dict(), "train": self.train.to_dict(),
                "grid": {"space": self.grid.space, "budget": self.grid.budget},
                "ablation": {"variants": list(self.ablation.variants), "seeds": list(self.ablation.seeds)}}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def load_series(self) -> TimeSeries:
        d = self.data
        if d.synth is not None:
            return synth_generate(d.synth.profile, int(d.synth.days), seed=self.seed, noise=d.synth.noise)
        path = Path(d.path)
        if not path.is_absolute() and self.source is not None:
            path = Path(self.source).parent / path
        return ingest_csv(path, d.column_map or None, timestamp_format=d.timestamp_format,
                          fill_gaps=int(d.fill_gaps))

    def prepare(self, ts: TimeSeries | None = None) -> PreparedData:
        d = self.data
        ts = self.load_series() if ts is None else ts
        return prepare(ts, d.features, int(d.window), int(d.horizon), int(d.stride),
                       train_stride=int(d.train_stride))


TOP_KEYS = ("seed", "variant", "output_dir", "data", "train", "grid", "ablation")


def parse_config(raw: dict, source: str | None = None) -> RunConfig:
    """Validate a configuration mapping; every problem names the offending key."""
    if raw is None:
        raw = {}
    _check_keys("", raw, TOP_KEYS)
    for required in ("data",):
        if required not in raw:
            raise ConfigError(f"missing config key: {required}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    data_raw = dict(raw["data"] or {})
    _check_keys("data", data_raw, [f.name for f in fields(DataSpec)])
    if data_raw.get("synth") is not None:
        _check_keys("data.synth", data_raw["synth"], [f.name for f in fields(SynthSpec)])
        data_raw["synth"] = SynthSpec(**data_raw["synth"])
    data = DataSpec(**data_raw)

    train_raw = dict(raw.get("train") or {})
    if "seed" in train_raw:
        raise ConfigError("train.seed is not accepted; set the top-level seed")
    _check_keys("train", train_raw, [f.name for f in fields(TrainConfig)])
    try:
        train = TrainConfig.from_dict({**train_raw, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None

    try:
        variant = canonical_variant(raw.get("variant", "hyperenergy_full"))
    except ValueError as exc:
        raise ConfigError(f"variant: {exc}") from None

    grid_raw = raw.get("grid") or {}
    _check_keys("grid", grid_raw, ("space", "budget"))
    space = grid_raw.get("space", "table_ii")
    if space == "table_ii":
        space = {k: list(v) for k, v in TABLE_II_SPACE.items()}
    if not isinstance(space, dict) or not space:
        raise ConfigError("grid.space must be 'table_ii' or a non-empty mapping")
    _check_keys("grid.space", space, train.to_dict())
    for k, vals in space.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"grid.space.{k} must be a non-empty list")
        for v in vals:
            try:
                TrainConfig.from_dict({**train.to_dict(), k: v})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"grid.space.{k}: {exc}") from None
    budget = grid_raw.get("budget")
    if budget is not None and (not isinstance(budget, int) or budget < 1):
        raise ConfigError("grid.budget must be a positive integer")

    abl_raw = raw.get("ablation") or {}
    _check_keys("ablation", abl_raw, ("variants", "seeds"))
    abl = AblationSpec(**abl_raw)
    try:
        abl.variants = [canonical_variant(v) for v in abl.variants]
    except ValueError as exc:
        raise ConfigError(f"ablation.variants: {exc}") from None
    if not abl.variants or not abl.seeds or not all(isinstance(s, int) and s >= 0 for s in abl.seeds):
        raise ConfigError("ablation needs non-empty variants and non-negative integer seeds")

    out = raw.get("output_dir", "runs/default")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a non-empty string")
    try:
        return RunConfig(data, train, variant, seed, out, GridSpec(space, budget), abl, source)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return parse_config(raw, str(path))


EXAMPLE_CONFIG = """\
# Every randomness source (synthesis, initialization, shuffling) derives from this seed.
seed: 0
# Model variant: full, no_kernel, traditional_rbf, learnable_rbf, traditional_poly,
# learnable_poly, traditional_combined, lstm, mlp (or the long hyperenergy_* names).
variant: full
# Checkpoints, CSVs and figures are written here.
output_dir: runs/example

data:
  # Either a CSV file (columns timestamp, consumption[, temperature]) ...
  # path: data/house.csv
  # column_map: {timestamp: time, consumption: kwh}
  # timestamp_format: "%Y-%m-%d %H:%M"
  # fill_gaps: 0          # forward-fill up to this many missing hours (0..3)
  # ... or a synthetic consumer.
  synth:
    profile: residence    # residence, detached, ev_home, townhouse, office
    days: 730
    noise: 0.05
  features: [consumption, temperature, hour_of_day, day_of_week, day_of_year]
  window: 24              # input hours
  horizon: 24             # predicted hours
  stride: 1
  train_stride: 1         # keep every k-th training window (validation/test untouched)

train:
  loss: MAE               # MAE or MSE
  optimizer: Adam         # Adam, SGD or AdamW
  # lr: 0.001             # default 1e-3 (Adam/AdamW), 1e-2 (SGD)
  batch_size: 32
  max_epochs: 300
  patience: 5             # early stopping
  plateau_factor: 0.5
  plateau_patience: 3
  min_lr: 1.0e-6
  weight_decay: 0.01      # AdamW only
  hidden_units: 64        # LSTM width u
  lstm_layers: 2
  hypernet_hidden: [64, 64]
  activation: relu        # relu or swish (hypernetwork)
  num_points: 64          # kernel reference points N_r
  degree: 2               # polynomial degree d
  gamma: 1.0              # RBF coefficient
  theta_mode: per_sample  # per_sample or batch_mean

grid:
  space: table_ii         # or a mapping such as {hidden_units: [16, 32], loss: [MAE, MSE]}
  # budget: 10            # cap on new trials per invocation

ablation:
  variants: [full, no_kernel, lstm]
  seeds: [0, 1, 2, 3, 4]
"""
