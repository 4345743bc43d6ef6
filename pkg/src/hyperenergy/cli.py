"""Command-line interface: synth, train, evaluate, gridsearch, ablate, predict."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import EXAMPLE_CONFIG, ConfigError, RunConfig, load_config
from .data import (PROFILES, DataError, MinMaxScaler, apply_scaler, chronological_split,
                   extract_calendar_features, ingest_csv, make_windows, synth_generate)
from .evaluation import (PREDICTION_FIELDS, REPORT_FIELDS, RUN_FIELDS, SUMMARY_FIELDS, ablation_run,
                         build_variant, denormalized_predictions, evaluate, model_from_meta,
                         prediction_rows, write_csv_rows)
from .gridsearch import RESULT_FIELDS, grid_search
from .primary import load_params, read_checkpoint, save_checkpoint
from .training import NumericalError, TrainHistory, TrainState, config_hash, predict, train

log = logging.getLogger("hyperenergy")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_smape", "lr")
STAMP_FIELDS = ("config_hash", "tool_version")


class _Interrupted(Exception):
    pass


def _stamp(rows, chash: str) -> list[dict]:
    return [{**r, "config_hash": chash, "tool_version": __version__} for r in rows]


def _write(path, fields, rows, chash):
    return write_csv_rows(path, (*fields, *STAMP_FIELDS), _stamp(rows, chash))


# ----------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    ts = synth_generate(args.profile, args.days, seed=args.seed, noise=args.noise)
    chash = config_hash({"profile": args.profile, "days": args.days, "seed": args.seed, "noise": args.noise})
    df = ts.to_frame()
    df["config_hash"] = chash
    df["tool_version"] = __version__
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, index=False, float_format="%.6f", lineterminator="\n")
    print(f"wrote {len(df)} rows to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# train

def _state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = {f"current/{k}": v for k, v in state.current.items()}
    arrays.update({f"opt/{k}": v for k, v in state.optimizer.items()})
    return arrays


def _state_meta(state: TrainState) -> dict:
    return {"epoch": state.epoch, "scheduler": state.scheduler, "stopper": state.stopper,
            "history": state.history.to_dict(timings=False)}


def _state_from_checkpoint(meta: dict, params: dict, extras: dict) -> TrainState:
    ts = meta["train_state"]
    current = {k[len("current/"):]: v for k, v in extras.items() if k.startswith("current/")}
    opt = {k[len("opt/"):]: v for k, v in extras.items() if k.startswith("opt/")}
    return TrainState(ts["epoch"], current, params, opt, ts["scheduler"], ts["stopper"],
                      TrainHistory.from_dict(ts["history"]))


def _run_meta(cfg: RunConfig, data) -> dict:
    return {"config_hash": cfg.hash, "tool_version": __version__, "config": cfg.to_dict(),
            "scaler": data.scaler.to_dict(), "features": list(data.feature_names),
            "data": {"window": data.train.window, "horizon": data.train.horizon,
                     "column_map": cfg.data.column_map, "timestamp_format": cfg.data.timestamp_format}}


def _report_outputs(model, data, out: Path, chash: str, variant: str, plots: bool, history=None) -> None:
    reports = [evaluate(model, getattr(data, s), data.scaler, variant) for s in ("val", "test")]
    _write(out / "metrics.csv", REPORT_FIELDS, [r.row() for r in reports], chash)
    _write(out / "predictions.csv", PREDICTION_FIELDS, prediction_rows(model, data.test, data.scaler, variant),
           chash)
    if plots:
        from .plotting import plot_history, plot_predictions
        if history is not None and len(history):
            plot_history(history, out / "history.png", f"{variant} ({chash})")
        y, yhat = denormalized_predictions(model, data.test, data.scaler)
        plot_predictions(y, yhat, out / "predictions.png", f"{variant} test ({chash})")
    for r in reports:
        print(f"{r.split:>5}: MAE {r.mae:.4f}  RMSE {r.rmse:.4f}  SMAPE {r.smape:.3f}%")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir or cfg.output_dir)
    ckpt = out / "checkpoint.npz"
    data = cfg.prepare()
    model = build_variant(cfg.variant, cfg.train, num_features=len(data.feature_names),
                          window=data.train.window, horizon=data.train.horizon,
                          train_inputs=data.train.inputs)
    resume = None
    if args.resume:
        meta, params, extras = read_checkpoint(ckpt)
        if meta.get("config_hash") != cfg.hash:
            raise ConfigError(f"checkpoint {ckpt} was written with config {meta.get('config_hash')}, "
                              f"current config is {cfg.hash}")
        resume = _state_from_checkpoint(meta, params, extras)
        print(f"resuming after epoch {resume.epoch}")
    base_meta = _run_meta(cfg, data)

    def on_epoch(state: TrainState) -> None:
        save_checkpoint(ckpt, model, _state_arrays(state), {**base_meta, "train_state": _state_meta(state)},
                        params=state.best)
        if args.stop_after is not None and state.epoch >= args.stop_after:
            raise _Interrupted

    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(model, data.train, data.val, cfg.train, resume=resume, on_epoch=on_epoch)
    except _Interrupted:
        print(f"stopped after epoch {args.stop_after}; continue with --resume")
        return EXIT_OK
    state = result.state
    save_checkpoint(ckpt, model, _state_arrays(state), {**base_meta, "train_state": _state_meta(state)},
                    params=state.best)
    h = result.history
    _write(out / "history.csv", HISTORY_FIELDS, h.to_dict()["records"], cfg.hash)
    print(f"{len(h)} epochs, best epoch {h.best_epoch} ({h.stop_reason}); checkpoint {ckpt}")
    _report_outputs(result.model, data, out, cfg.hash, cfg.variant, not args.no_plots, h)
    return EXIT_OK


# ----------------------------------------------------------------------------
# evaluate / predict

def _load_model(path):
    meta, params, _ = read_checkpoint(path)
    model = model_from_meta(meta["model"])
    load_params(model, params)
    return model, meta


def _feature_table(meta: dict, csv_path):
    d = meta.get("data", {})
    ts = ingest_csv(csv_path, d.get("column_map") or None, timestamp_format=d.get("timestamp_format"))
    scaler = MinMaxScaler.from_dict(meta["scaler"])
    return extract_calendar_features(ts, meta["features"]), scaler


def cmd_evaluate(args) -> int:
    model, meta = _load_model(args.checkpoint)
    chash = meta.get("config_hash", "")
    if args.config is not None:
        cfg = load_config(args.config)
        data = cfg.prepare()
        ds = data.test
        scaler = data.scaler
        if list(data.feature_names) != list(meta["features"]):
            raise ConfigError("config feature set differs from the checkpoint's")
    else:
        table, scaler = _feature_table(meta, args.data)
        n, h = meta["model"]["window"], meta["model"]["horizon"]
        if args.split == "test":
            table = chronological_split(table, min_length=n + h)[2]
        ds = make_windows(apply_scaler(table, scaler), n, 1, h, scaler=scaler, split=args.split)
    variant = meta["model"]["variant"]
    rep = evaluate(model, ds, scaler, variant)
    out = Path(args.out)
    _write(out / "metrics.csv", REPORT_FIELDS, [rep.row()], chash)
    _write(out / "predictions.csv", PREDICTION_FIELDS, prediction_rows(model, ds, scaler, variant), chash)
    if not args.no_plots:
        from .plotting import plot_predictions
        y, yhat = denormalized_predictions(model, ds, scaler)
        plot_predictions(y, yhat, out / "predictions.png", f"{variant} ({chash})")
    print(f"{rep.split}: MAE {rep.mae:.6f}  RMSE {rep.rmse:.6f}  SMAPE {rep.smape:.4f}%  ({rep.samples} windows)")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, meta = _load_model(args.checkpoint)
    table, scaler = _feature_table(meta, args.input)
    n, h = meta["model"]["window"], meta["model"]["horizon"]
    if len(table) < n:
        raise DataError(f"need at least {n} hourly rows, got {len(table)}")
    last = apply_scaler(table.slice(len(table) - n, len(table)), scaler)
    col = table.names.index("consumption")
    pred = predict(model, last.values[None])
    values = scaler.inverse_column(pred, col)[0]
    stamps = last.timestamps[-1] + np.arange(1, h + 1) * np.timedelta64(1, "h")
    df = pd.DataFrame({"timestamp": pd.to_datetime(stamps).strftime("%Y-%m-%dT%H:%M:%S"),
                       "predicted": values, "config_hash": meta.get("config_hash", ""),
                       "tool_version": __version__})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(args.out, index=False, float_format="%.6f", lineterminator="\n")
        print(f"wrote {h} predictions to {args.out}")
    else:
        df.to_csv(sys.stdout, index=False, float_format="%.6f", lineterminator="\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# gridsearch / ablate

def cmd_gridsearch(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir or cfg.output_dir)
    space = cfg.grid.space
    if args.dry_run:
        res = grid_search(space, None, cfg.train, variant=cfg.variant, dry_run=True)
        _write(out / "grid_plan.csv", ("index", "combo_hash", "status", *space), res.ranked, cfg.hash)
        print(f"{res.total} combinations")
        return EXIT_OK
    data = cfg.prepare()
    budget = args.budget if args.budget is not None else cfg.grid.budget
    res = grid_search(space, data, cfg.train, variant=cfg.variant, results_path=out / "grid_results.csv",
                      jobs=args.jobs, budget=budget,
                      extra_columns={"config_hash": cfg.hash, "tool_version": __version__})
    fields = (*RESULT_FIELDS[:2], *space, *RESULT_FIELDS[2:])
    ranked = [{"rank": i + 1, **r} for i, r in enumerate(res.ranked)]
    _write(out / "grid_ranked.csv", ("rank", *fields), ranked, cfg.hash)
    done = sum(1 for r in res.ranked if r.get("status") in ("ok", "failed"))
    print(f"{done}/{res.total} combinations evaluated")
    if res.best_model is not None:
        best = res.ranked[0]
        save_checkpoint(out / "best.npz", res.best_model,
                        extra_meta={**_run_meta(cfg, data), "grid_index": int(best["index"])})
        print(f"best #{best['index']}: val SMAPE {float(best['val_smape']):.3f}%")
        if not args.no_plots:
            from .plotting import plot_grid
            plot_grid(res.ranked, out / "grid.png")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir or cfg.output_dir)
    data = cfg.prepare()
    table = ablation_run(data, cfg.ablation.variants, cfg.ablation.seeds, cfg.train, jobs=args.jobs)
    summary = table.summary()
    _write(out / "ablation_summary.csv", SUMMARY_FIELDS, summary, cfg.hash)
    _write(out / "ablation_runs.csv", RUN_FIELDS, [asdict(r) for r in table.runs], cfg.hash)
    if not args.no_plots:
        from .plotting import plot_ablation
        plot_ablation(summary, out / "ablation.png")
    for row in summary:
        print(f"{row['variant']:<34} SMAPE median {row['smape_median']:.3f}%  "
              f"({row['runs']} ok, {row['failed']} failed)")
    return EXIT_OK


def cmd_example_config(args) -> int:
    sys.stdout.write(EXAMPLE_CONFIG)
    return EXIT_OK


# ----------------------------------------------------------------------------

def _positive_days(text: str) -> int:
    v = int(text)
    if v < 4:
        raise argparse.ArgumentTypeError("days must be an integer >= 4")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperenergy", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic consumer CSV")
    s.add_argument("profile", choices=PROFILES)
    s.add_argument("days", type=_positive_days)
    s.add_argument("seed", type=int)
    s.add_argument("out")
    s.add_argument("--noise", type=float, default=0.05)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("config")
    t.add_argument("--out-dir", help="override output_dir")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output dir")
    t.add_argument("--stop-after", type=_positive, metavar="EPOCH",
                   help="stop (resumably) after this epoch")
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics and predictions of a checkpoint")
    e.add_argument("checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV to evaluate on")
    src.add_argument("--config", help="use the test split of this config's data")
    e.add_argument("--split", choices=("all", "test"), default="all",
                   help="with --data: every window of the file, or its chronological test part")
    e.add_argument("--out", default="eval")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gridsearch", help="exhaustive hyperparameter search")
    g.add_argument("config")
    g.add_argument("--out-dir")
    g.add_argument("--dry-run", action="store_true", help="enumerate combinations only")
    g.add_argument("--jobs", type=_positive, default=1)
    g.add_argument("--budget", type=_positive, help="cap on new trials this invocation")
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_gridsearch)

    a = sub.add_parser("ablate", help="train variants over seeds and compare")
    a.add_argument("config")
    a.add_argument("--out-dir")
    a.add_argument("--jobs", type=_positive, default=1)
    a.add_argument("--no-plots", action="store_true")
    a.set_defaults(func=cmd_ablate)

    pr = sub.add_parser("predict", help="forecast the hours after the last window of a CSV")
    pr.add_argument("checkpoint")
    pr.add_argument("input", help="CSV whose last rows form the input window")
    pr.add_argument("--out", help="output CSV (default stdout)")
    pr.set_defaults(func=cmd_predict)

    x = sub.add_parser("example-config", help="print an annotated config file")
    x.set_defaults(func=cmd_example_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KeyError, ValueError) as exc:
        # malformed checkpoints and other input problems
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
