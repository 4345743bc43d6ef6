"""Test-set evaluation, model variants and ablation studies."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import build_mlp, build_plain_lstm
from .data import PreparedData, WindowedDataset
from .metrics import mae, rmse, smape
from .primary import build_hyperenergy
from .training import NumericalError, TrainConfig, predict, train

log = logging.getLogger(__name__)

VARIANT_KERNEL_MODE = {
    "hyperenergy_full": "learnable",
    "hyperenergy_no_kernel": None,
    "hyperenergy_traditional_rbf": "traditional_rbf",
    "hyperenergy_learnable_rbf": "learnable_rbf_only",
    "hyperenergy_traditional_poly": "traditional_poly",
    "hyperenergy_learnable_poly": "learnable_poly_only",
    "hyperenergy_traditional_combined": "traditional_combined",
}
VARIANTS = (*VARIANT_KERNEL_MODE, "plain_lstm", "mlp_baseline")

# short names accepted on the command line / in configs
ALIASES = {
    "full": "hyperenergy_full",
    "no_kernel": "hyperenergy_no_kernel",
    "traditional_rbf": "hyperenergy_traditional_rbf",
    "learnable_rbf": "hyperenergy_learnable_rbf",
    "traditional_poly": "hyperenergy_traditional_poly",
    "learnable_poly": "hyperenergy_learnable_poly",
    "traditional_combined": "hyperenergy_traditional_combined",
    "learnable_combined": "hyperenergy_full",
    "lstm": "plain_lstm",
    "mlp": "mlp_baseline",
}

REPORT_FIELDS = ("variant", "split", "samples", "mae", "rmse", "smape")


def canonical_variant(tag: str) -> str:
    tag = ALIASES.get(tag, tag)
    if tag not in VARIANTS:
        raise ValueError(f"unknown variant {tag!r}; choose from {sorted(VARIANTS)}")
    return tag


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    smape: float
    samples: int
    split: str = "test"
    variant: str = ""

    def row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_FIELDS}


def metrics_report(y, yhat, split: str = "test", variant: str = "") -> MetricsReport:
    y = np.asarray(y, dtype=float)
    return MetricsReport(mae(y, yhat), rmse(y, yhat), smape(y, yhat), int(y.shape[0]), split, variant)


def denormalized_predictions(model, ds: WindowedDataset, scaler=None, batch_size: int = 256):
    """``(actual, predicted)`` in physical units, both ``[M, h]``."""
    scaler = scaler if scaler is not None else ds.scaler
    pred = predict(model, ds.inputs, batch_size)
    if scaler is None:
        return ds.targets.copy(), pred
    return (scaler.inverse_column(ds.targets, ds.target_col),
            scaler.inverse_column(pred, ds.target_col))


def evaluate(model, ds: WindowedDataset, scaler=None, variant: str = "") -> MetricsReport:
    """Metrics over all horizon positions pooled, after inverting the scaler."""
    y, yhat = denormalized_predictions(model, ds, scaler)
    report = metrics_report(y.ravel(), yhat.ravel(), ds.split, variant or getattr(model, "variant", ""))
    report.samples = len(ds)
    return report


# ----------------------------------------------------------------------------
# variants

def build_variant(tag: str, config: TrainConfig, *, num_features: int, window: int = 24,
                  horizon: int = 24, train_inputs: np.ndarray | None = None, seed: int | None = None):
    tag = canonical_variant(tag)
    seed = config.seed if seed is None else seed
    if tag == "plain_lstm":
        return build_plain_lstm(num_features=num_features, window=window, horizon=horizon,
                                hidden_units=config.hidden_units, lstm_layers=config.lstm_layers, seed=seed)
    if tag == "mlp_baseline":
        width = config.hidden_units
        return build_mlp(num_features=num_features, window=window, horizon=horizon,
                         hidden=(width, width), activation=config.activation, seed=seed)
    return build_hyperenergy(
        num_features=num_features, window=window, horizon=horizon, hidden_units=config.hidden_units,
        lstm_layers=config.lstm_layers, hypernet_hidden=config.hypernet_hidden,
        activation=config.activation, kernel_mode=VARIANT_KERNEL_MODE[tag],
        num_points=config.num_points, degree=config.degree, gamma=config.gamma,
        theta_mode=config.theta_mode, seed=seed, train_inputs=train_inputs, variant=tag)


def model_from_meta(meta: dict):
    """Rebuild an (untrained) model with the architecture recorded in ``meta``."""
    kind = meta["kind"]
    common = dict(num_features=meta["num_features"], window=meta["window"], horizon=meta["horizon"])
    if kind == "plain_lstm":
        return build_plain_lstm(**common, hidden_units=meta["hidden_units"], lstm_layers=meta["lstm_layers"])
    if kind == "mlp":
        return build_mlp(**common, hidden=tuple(meta["hidden"]), activation=meta["activation"])
    if kind != "hyperenergy":
        raise ValueError(f"unknown model kind {kind!r}")
    k = meta["kernel"]
    dummy = None
    if k is not None and k["mode"].startswith("traditional"):
        dummy = np.zeros((1, meta["window"], meta["num_features"]))
    return build_hyperenergy(
        **common, hidden_units=meta["hidden_units"], lstm_layers=meta["lstm_layers"],
        hypernet_hidden=tuple(meta["hypernet_hidden"]), activation=meta["activation"],
        kernel_mode=None if k is None else k["mode"],
        num_points=64 if k is None else k["num_points"],
        degree=2 if k is None else k["degree"], gamma=1.0 if k is None else k["gamma"],
        theta_mode=meta["theta_mode"], train_inputs=dummy, variant=meta["variant"])


# ----------------------------------------------------------------------------
# ablations

@dataclass
class RunResult:
    variant: str
    seed: int
    status: str
    mae: float = float("nan")
    rmse: float = float("nan")
    smape: float = float("nan")
    val_smape: float = float("nan")
    epochs: int = 0
    best_epoch: int = 0
    stop_reason: str = ""
    error: str = ""


def run_variant(data: PreparedData, variant: str, config: TrainConfig, seed: int) -> RunResult:
    """Build, train and test one (variant, seed) pair; failures are captured, not raised."""
    variant = canonical_variant(variant)
    cfg = replace(config, seed=seed)
    try:
        model = build_variant(variant, cfg, num_features=data.train.inputs.shape[2],
                              window=data.train.window, horizon=data.train.horizon,
                              train_inputs=data.train.inputs, seed=seed)
        result = train(model, data.train, data.val, cfg)
        rep = evaluate(result.model, data.test, data.scaler, variant)
    except (NumericalError, FloatingPointError, ValueError) as exc:
        log.warning("run %s seed %d failed: %s", variant, seed, exc)
        return RunResult(variant, seed, "failed", error=str(exc))
    hist = result.history
    return RunResult(variant, seed, "ok", rep.mae, rep.rmse, rep.smape,
                     hist.records[hist.best_epoch - 1].val_smape, len(hist), hist.best_epoch,
                     hist.stop_reason)


def _run_star(args):
    return run_variant(*args)


@dataclass
class AblationTable:
    runs: list[RunResult]
    variants: list[str]

    def summary(self) -> list[dict]:
        rows = []
        for v in self.variants:
            ok = [r for r in self.runs if r.variant == v and r.status == "ok"]
            failed = sum(1 for r in self.runs if r.variant == v and r.status != "ok")
            row = {"variant": v, "runs": len(ok), "failed": failed}
            for m in ("mae", "rmse", "smape"):
                vals = np.array([getattr(r, m) for r in ok])
                row[f"{m}_median"] = float(np.median(vals)) if len(vals) else float("nan")
                row[f"{m}_min"] = float(vals.min()) if len(vals) else float("nan")
                row[f"{m}_max"] = float(vals.max()) if len(vals) else float("nan")
            rows.append(row)
        return rows

    def median(self, variant: str, metric: str = "smape") -> float:
        variant = canonical_variant(variant)
        for row in self.summary():
            if row["variant"] == variant:
                return row[f"{metric}_median"]
        raise KeyError(variant)


SUMMARY_FIELDS = ("variant", "runs", "failed", "mae_median", "mae_min", "mae_max", "rmse_median",
                  "rmse_min", "rmse_max", "smape_median", "smape_min", "smape_max")
RUN_FIELDS = tuple(RunResult.__dataclass_fields__)


def ablation_run(data: PreparedData, variants: Sequence[str], seeds: Sequence[int], config: TrainConfig,
                 jobs: int = 1) -> AblationTable:
    """Train every (variant, seed) pair on identical data and config."""
    variants = [canonical_variant(v) for v in variants]
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    tasks = [(data, v, config, int(s)) for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_star, tasks))
    else:
        runs = [_run_star(t) for t in tasks]
    return AblationTable(runs, variants)


def write_csv_rows(path, fieldnames, rows, header_comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_ablation(table: AblationTable, out_dir, comment: str | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    summary = write_csv_rows(out_dir / "ablation_summary.csv", SUMMARY_FIELDS, table.summary(), comment)
    runs = write_csv_rows(out_dir / "ablation_runs.csv", RUN_FIELDS, [asdict(r) for r in table.runs], comment)
    return summary, runs


def prediction_rows(model, ds: WindowedDataset, scaler=None, variant: str = "") -> list[dict]:
    """Long-format rows (timestamp, horizon step, actual, predicted, variant)."""
    y, yhat = denormalized_predictions(model, ds, scaler)
    variant = variant or getattr(model, "variant", "")
    rows = []
    for i in range(len(ds)):
        for j in range(ds.horizon):
            rows.append({"sample": i, "step": j + 1,
                         "timestamp": str(ds.target_times[i, j]),
                         "actual": float(y[i, j]), "predicted": float(yhat[i, j]), "variant": variant})
    return rows


PREDICTION_FIELDS = ("sample", "step", "timestamp", "actual", "predicted", "variant")
