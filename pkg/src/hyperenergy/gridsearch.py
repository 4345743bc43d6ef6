"""Exhaustive grid search over training hyperparameters with a CSV results log."""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import PreparedData
from .evaluation import build_variant, canonical_variant, evaluate
from .training import NumericalError, TrainConfig, config_hash, train

log = logging.getLogger(__name__)

# Hyperparameter ranges searched for HyperEnergy (hidden size x optimizer x
# loss x polynomial degree x RBF coefficient x activation = 720 combinations).
TABLE_II_SPACE: dict[str, list] = {
    "hidden_units": [64, 128, 256],
    "optimizer": ["Adam", "SGD", "AdamW"],
    "loss": ["MAE", "MSE"],
    "degree": [2, 3, 4, 5],
    "gamma": [2, 5, 6, 8, 10],
    "activation": ["relu", "swish"],
}

RESULT_FIELDS = ("index", "combo_hash", "status", "val_smape", "val_mae", "val_rmse", "best_val_loss",
                 "final_train_loss", "epochs", "best_epoch", "stop_reason", "seed", "error")


def enumerate_space(space: dict[str, list]) -> list[dict]:
    """Cartesian product in key order, last key varying fastest."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("search space must be non-empty in every dimension")
    keys = list(space)
    return [dict(zip(keys, values)) for values in itertools.product(*(space[k] for k in keys))]


def _combo_config(base: TrainConfig, combo: dict) -> TrainConfig:
    unknown = set(combo) - set(base.to_dict())
    if unknown:
        raise KeyError(f"unknown hyperparameters in search space: {sorted(unknown)}")
    # a learning rate left unset follows the optimizer default
    return replace(base, **combo)


@dataclass
class Trial:
    index: int
    combo: dict
    row: dict
    params: dict | None = None


def run_trial(index: int, combo: dict, data: PreparedData, base: TrainConfig, variant: str) -> Trial:
    cfg = _combo_config(base, combo)
    row = {"index": index, "combo_hash": config_hash(combo), "seed": cfg.seed, **combo}
    try:
        model = build_variant(variant, cfg, num_features=data.train.inputs.shape[2],
                              window=data.train.window, horizon=data.train.horizon,
                              train_inputs=data.train.inputs)
        result = train(model, data.train, data.val, cfg)
        rep = evaluate(result.model, data.val, data.scaler, variant)
    except (NumericalError, FloatingPointError, ValueError) as exc:
        log.warning("trial %d failed: %s", index, exc)
        row.update(status="failed", error=str(exc))
        return Trial(index, combo, row)
    h = result.history
    row.update(status="ok", val_smape=rep.smape, val_mae=rep.mae, val_rmse=rep.rmse,
               best_val_loss=h.best_val_loss, final_train_loss=h.records[-1].train_loss,
               epochs=len(h), best_epoch=h.best_epoch, stop_reason=h.stop_reason, error="")
    params = {k: t.data.copy() for k, t in result.model.tensors().items()}
    return Trial(index, combo, row, params)


def _trial_star(args):
    return run_trial(*args)


def rank_rows(rows: list[dict]) -> list[dict]:
    """Order by validation SMAPE, then validation MAE, then enumeration index; failures last."""
    def key(r):
        ok = r.get("status") == "ok"
        return (0 if ok else 1,
                float(r["val_smape"]) if ok else np.inf,
                float(r["val_mae"]) if ok else np.inf,
                int(r["index"]))
    return sorted(rows, key=key)


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class GridResult:
    ranked: list[dict]
    total: int
    best_model: object | None = None
    results_path: Path | None = None


def grid_search(space: dict[str, list], data: PreparedData | None, base: TrainConfig, *,
                variant: str = "hyperenergy_full", results_path=None, jobs: int = 1,
                budget: int | None = None, dry_run: bool = False, extra_columns: dict | None = None) -> GridResult:
    """Train one model per combination and rank them.

    Rows already present in ``results_path`` (same index and combination hash)
    are kept and not re-run, so an interrupted search resumes where it stopped.
    ``budget`` caps the number of new trials. ``dry_run`` only enumerates.
    """
    combos = enumerate_space(space)
    variant = canonical_variant(variant)
    for combo in combos:
        _combo_config(base, combo)
    if dry_run:
        rows = [{"index": i, "combo_hash": config_hash(c), "status": "planned", **c} for i, c in enumerate(combos)]
        return GridResult(rows, len(combos))
    if data is None:
        raise ValueError("data is required unless dry_run is set")

    fieldnames = list(RESULT_FIELDS[:2]) + list(space) + list(RESULT_FIELDS[2:]) + list(extra_columns or {})
    done: dict[int, dict] = {}
    if results_path is not None:
        for row in read_results(results_path):
            idx = int(row["index"])
            if idx < len(combos) and row["combo_hash"] == config_hash(combos[idx]):
                done[idx] = row
    pending = [(i, c) for i, c in enumerate(combos) if i not in done]
    if budget is not None:
        pending = pending[:budget]

    writer = None
    fh = None
    if results_path is not None:
        results_path = Path(results_path)
        results_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not results_path.is_file() or not done
        fh = open(results_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        if fresh:
            writer.writeheader()
            fh.flush()

    best_params, best_key = None, None
    new_rows = []
    tasks = [(i, c, data, base, variant) for i, c in pending]
    try:
        if jobs > 1:
            pool = ProcessPoolExecutor(max_workers=jobs)
            trials = pool.map(_trial_star, tasks)
        else:
            pool = None
            trials = map(_trial_star, tasks)
        for trial in trials:
            row = {**trial.row, **(extra_columns or {})}
            # rank on the persisted values so a resumed search orders rows identically
            stored = {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()}
            new_rows.append(stored)
            if writer is not None:
                writer.writerow(stored)
                fh.flush()
            if trial.params is not None:
                key = (float(stored["val_smape"]), float(stored["val_mae"]), row["index"])
                if best_key is None or key < best_key:
                    best_key, best_params = key, (trial.combo, trial.params)
        if pool is not None:
            pool.shutdown()
    finally:
        if fh is not None:
            fh.close()

    ranked = rank_rows(list(done.values()) + new_rows)
    best_model = None
    if ranked and ranked[0].get("status") == "ok":
        top = int(ranked[0]["index"])
        cfg = _combo_config(base, combos[top])
        best_model = build_variant(variant, cfg, num_features=data.train.inputs.shape[2],
                                   window=data.train.window, horizon=data.train.horizon,
                                   train_inputs=data.train.inputs)
        if best_params is not None and best_params[0] == combos[top]:
            for name, t in best_model.tensors().items():
                t.data = best_params[1][name].copy()
        else:
            # best trial came from an earlier session; retraining is deterministic
            best_model = train(best_model, data.train, data.val, cfg).model
    return GridResult(ranked, len(combos), best_model, Path(results_path) if results_path else None)
