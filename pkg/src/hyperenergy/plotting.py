"""Static figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history, path, title: str = "") -> Path:
    """Train and validation loss per epoch, learning rate on a twin axis."""
    recs = history.records
    epochs = [r.epoch for r in recs]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r.train_loss for r in recs], label="train loss")
    ax.plot(epochs, [r.val_loss for r in recs], label="validation loss")
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="grey", ls=":", label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (scaled units)")
    ax2 = ax.twinx()
    ax2.step(epochs, [r.lr for r in recs], where="post", color="tab:red", alpha=0.4)
    ax2.set_ylabel("learning rate", color="tab:red")
    ax2.set_yscale("log")
    ax.legend(loc="upper right")
    ax.set_title(title or "training history")
    return _save(fig, path)


def plot_predictions(actual: np.ndarray, predicted: np.ndarray, path, title: str = "",
                     max_hours: int = 24 * 14) -> Path:
    """One-step-ahead actual vs predicted over the first ``max_hours`` hours.

    Uses the first horizon position of each window so consecutive samples
    form a continuous hourly trace.
    """
    y = np.asarray(actual)[:max_hours, 0]
    yhat = np.asarray(predicted)[:max_hours, 0]
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(y, label="actual", lw=1.2)
    ax.plot(yhat, label="predicted", lw=1.0)
    ax.set_xlabel("hour")
    ax.set_ylabel("consumption (kWh)")
    ax.legend()
    ax.set_title(title or "actual vs predicted")
    return _save(fig, path)


def plot_ablation(summary_rows: list[dict], path, metric: str = "smape") -> Path:
    """Median metric per variant with min/max whiskers."""
    names = [r["variant"] for r in summary_rows]
    med = np.array([float(r[f"{metric}_median"]) for r in summary_rows])
    lo = np.array([float(r[f"{metric}_min"]) for r in summary_rows])
    hi = np.array([float(r[f"{metric}_max"]) for r in summary_rows])
    fig, ax = plt.subplots(figsize=(max(5, 1.1 * len(names)), 4))
    pos = np.arange(len(names))
    ax.bar(pos, med, color="tab:blue", alpha=0.8)
    ax.errorbar(pos, med, yerr=[np.nan_to_num(med - lo), np.nan_to_num(hi - med)], fmt="none",
                ecolor="black", capsize=4)
    ax.set_xticks(pos)
    ax.set_xticklabels([n.replace("hyperenergy_", "") for n in names], rotation=30, ha="right")
    ax.set_ylabel(f"test {metric.upper()} (median, min-max)")
    ax.set_title("ablation")
    return _save(fig, path)


def plot_grid(ranked_rows: list[dict], path, top: int = 20) -> Path:
    """Validation SMAPE of the best ``top`` grid combinations."""
    ok = [r for r in ranked_rows if r.get("status") == "ok"][:top]
    fig, ax = plt.subplots(figsize=(7, max(3, 0.3 * len(ok) + 1)))
    vals = [float(r["val_smape"]) for r in ok]
    ax.barh(np.arange(len(ok)), vals, color="tab:green")
    ax.set_yticks(np.arange(len(ok)))
    ax.set_yticklabels([f"#{r['index']}" for r in ok])
    ax.invert_yaxis()
    ax.set_xlabel("validation SMAPE (%)")
    ax.set_title("grid search ranking")
    return _save(fig, path)
