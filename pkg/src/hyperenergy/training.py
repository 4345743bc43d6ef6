"""Losses, optimizers, plateau learning-rate schedule, early stopping and the
mini-batch training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import WindowedDataset
from .metrics import smape

log = logging.getLogger(__name__)

LOSSES = ("MAE", "MSE")
OPTIMIZERS = ("SGD", "Adam", "AdamW")


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    loss: str = "MAE"
    optimizer: str = "Adam"
    lr: float | None = None
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 5
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    min_lr: float = 1e-6
    improvement_threshold: float = 1e-8
    weight_decay: float = 0.01
    hidden_units: int = 64
    lstm_layers: int = 2
    degree: int = 2
    gamma: float = 1.0
    num_points: int = 64
    kernel_mode: str = "learnable"
    hypernet_hidden: tuple = (64, 64)
    activation: str = "relu"
    theta_mode: str = "per_sample"
    seed: int = 0

    def __post_init__(self):
        self.hypernet_hidden = tuple(int(w) for w in self.hypernet_hidden)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr is None:
            self.lr = 1e-2 if self.optimizer == "SGD" else 1e-3
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hypernet_hidden"] = list(self.hypernet_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# losses

def loss_fn(pred: Tensor, target, kind: str = "MSE") -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    resid = ad.sub(pred, target)
    if kind == "MSE":
        return ad.mean(ad.pow_int(resid, 2))
    if kind == "MAE":
        return ad.mean(ad.absolute(resid))
    raise ValueError(f"unknown loss {kind!r}")


# ----------------------------------------------------------------------------
# optimizers

class Optimizer:
    """Updates named parameter tensors in place from their ``.grad``."""

    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = dict(params)
        self.lr = float(lr)
        self.state: dict[str, dict[str, np.ndarray | int]] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            self._update(name, p)

    def _update(self, name: str, p: Tensor) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.state.items():
            for key, val in st.items():
                out[f"{name}/{key}"] = np.asarray(val)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state = {}
        for key, val in arrays.items():
            name, slot = key.rsplit("/", 1)
            self.state.setdefault(name, {})[slot] = int(val) if slot == "t" else val.copy()


class SGD(Optimizer):
    def _update(self, name, p):
        p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay

    def _decay(self, p: Tensor) -> None:
        pass

    def _update(self, name, p):
        st = self.state.get(name)
        if st is None:
            st = self.state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        g = p.grad
        st["t"] += 1
        t = st["t"]
        st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
        st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * g * g
        m_hat = st["m"] / (1 - self.beta1 ** t)
        v_hat = st["v"] / (1 - self.beta2 ** t)
        self._decay(p)
        p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdamW(Adam):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super().__init__(params, lr, betas, eps, weight_decay)

    def _decay(self, p):
        p.data *= 1.0 - self.lr * self.weight_decay


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float, weight_decay: float = 0.01) -> Optimizer:
    if kind == "SGD":
        return SGD(params, lr)
    if kind == "Adam":
        return Adam(params, lr)
    if kind == "AdamW":
        return AdamW(params, lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


# ----------------------------------------------------------------------------
# schedules

@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` stagnant epochs."""

    lr: float
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    threshold: float = 1e-8
    best: float = float("inf")
    num_bad: int = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                # never raises a rate that already sits below the floor
                self.lr = max(self.lr * self.factor, min(self.min_lr, self.lr))
                self.num_bad = 0
        return self.lr


def reduce_lr_on_plateau(val_losses, lr: float, factor: float = 0.5, patience: int = 3,
                         min_lr: float = 1e-6, threshold: float = 1e-8) -> float:
    """Learning rate after replaying ``val_losses`` through the plateau policy."""
    if len(val_losses) < 1:
        raise ValueError("need at least one completed epoch")
    sched = PlateauScheduler(lr, factor, patience, min_lr, threshold)
    for v in val_losses:
        sched.step(float(v))
    return sched.lr


@dataclass
class EarlyStopping:
    patience: int = 5
    threshold: float = 1e-8
    best: float = float("inf")
    best_epoch: int = 0
    num_bad: int = 0

    def step(self, val_loss: float, epoch: int) -> bool:
        """Record one epoch; return True when training should stop."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.best_epoch = epoch
            self.num_bad = 0
            return False
        self.num_bad += 1
        return self.num_bad >= self.patience


# ----------------------------------------------------------------------------
# training loop

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_smape: float
    lr: float
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    @property
    def best_val_loss(self) -> float:
        return self.records[self.best_epoch - 1].val_loss if self.best_epoch else float("inf")

    def to_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    def to_dict(self, timings: bool = False) -> dict:
        rows = self.to_rows()
        if not timings:
            for r in rows:
                r.pop("seconds")
        return {"records": rows, "stop_reason": self.stop_reason, "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls([EpochRecord(**r) for r in d["records"]], d["stop_reason"], d["best_epoch"])


@dataclass
class TrainState:
    """Everything needed to continue an interrupted run."""

    epoch: int
    current: dict[str, np.ndarray]
    best: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    scheduler: dict
    stopper: dict
    history: TrainHistory


@dataclass
class TrainResult:
    model: object
    history: TrainHistory
    state: TrainState
    step_log: list = field(default_factory=list)


def predict(model, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Scaled predictions ``[M, h]`` without building a graph."""
    out = []
    with ad.no_grad():
        for i in range(0, len(inputs), batch_size):
            out.append(model.forward(Tensor(inputs[i:i + batch_size])).data)
    return np.concatenate(out, axis=0)


def evaluate_loss(model, ds: WindowedDataset, kind: str, batch_size: int = 256) -> tuple[float, float]:
    """Mean loss on the scaled targets and SMAPE on denormalized values."""
    pred = predict(model, ds.inputs, batch_size)
    resid = pred - ds.targets
    loss = float(np.mean(resid ** 2) if kind == "MSE" else np.mean(np.abs(resid)))
    if ds.scaler is not None:
        y = ds.scaler.inverse_column(ds.targets, ds.target_col)
        yhat = ds.scaler.inverse_column(pred, ds.target_col)
    else:
        y, yhat = ds.targets, pred
    return loss, smape(y.ravel(), yhat.ravel())


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.items()}


def _restore(model, arrays: dict[str, np.ndarray]) -> None:
    tensors = model.tensors()
    for name, arr in arrays.items():
        tensors[name].data = arr.copy()


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffle for one epoch."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(model, train_ds: WindowedDataset, val_ds: WindowedDataset, config: TrainConfig, *,
          resume: TrainState | None = None, on_epoch: Callable[[TrainState], None] | None = None,
          max_steps: int | None = None, record_steps: bool = False) -> TrainResult:
    """Mini-batch training with plateau LR schedule and early stopping.

    Only ``model.trainable()`` tensors are updated. The returned model holds
    the parameters of the best validation epoch. ``max_steps`` caps the total
    number of optimizer steps (used by structural tests).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and validation datasets must be non-empty")
    params = model.trainable()
    opt = make_optimizer(config.optimizer, params, config.lr, config.weight_decay)
    sched = PlateauScheduler(config.lr, config.plateau_factor, config.plateau_patience,
                             config.min_lr, config.improvement_threshold)
    stopper = EarlyStopping(config.patience, config.improvement_threshold)
    history = TrainHistory()
    best = _snapshot(model.tensors())
    start_epoch = 1
    if resume is not None:
        _restore(model, resume.current)
        opt.load_state_arrays(resume.optimizer)
        sched = PlateauScheduler(**resume.scheduler)
        stopper = EarlyStopping(**resume.stopper)
        history = TrainHistory.from_dict(resume.history.to_dict(timings=True))
        best = {k: v.copy() for k, v in resume.best.items()}
        start_epoch = resume.epoch + 1
        if history.stop_reason == "early_stop":
            start_epoch = config.max_epochs + 1
    opt.lr = sched.lr

    steps = 0
    step_log = []
    epoch = start_epoch - 1
    for epoch in range(start_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = batch_order(len(train_ds), config.seed, epoch)
        total, count = 0.0, 0
        for bi in range(0, len(order), config.batch_size):
            idx = order[bi:bi + config.batch_size]
            opt.zero_grad()
            pred = model.forward(Tensor(train_ds.inputs[idx]))
            loss = loss_fn(pred, train_ds.targets[idx], config.loss)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi // config.batch_size}")
            ad.backward(loss)
            opt.step()
            if record_steps:
                step_log.append({n: p.grad is not None for n, p in params.items()})
            total += float(loss.data) * len(idx)
            count += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        val_loss, val_smape = evaluate_loss(model, val_ds, config.loss)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.records.append(EpochRecord(epoch, total / count, val_loss, val_smape, opt.lr,
                                           time.perf_counter() - t0))
        stop = stopper.step(val_loss, epoch)
        if stopper.best_epoch == epoch:
            best = _snapshot(model.tensors())
        opt.lr = sched.step(val_loss)
        log.debug("epoch %d train %.6f val %.6f smape %.3f lr %.2e", epoch, total / count,
                  val_loss, val_smape, opt.lr)
        history.best_epoch = stopper.best_epoch
        capped = max_steps is not None and steps >= max_steps
        if stop:
            history.stop_reason = "early_stop"
        elif capped:
            history.stop_reason = "max_steps"
        elif epoch == config.max_epochs:
            history.stop_reason = "max_epochs"
        else:
            history.stop_reason = ""
        if on_epoch is not None:
            on_epoch(TrainState(epoch, _snapshot(model.tensors()), best, opt.state_arrays(),
                                asdict(sched), asdict(stopper), history))
        if stop or capped:
            break

    state = TrainState(epoch, _snapshot(model.tensors()), best, opt.state_arrays(),
                       asdict(sched), asdict(stopper), history)
    _restore(model, best)
    return TrainResult(model, history, state, step_log)
