"""Functional LSTM driven by generated parameters, the linear output head, and
the composed HyperEnergy model."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hypernet import HyperNetParams, hypernet_forward, hypernet_init, xavier_uniform
from .integration import LstmParamLayout, build_layout, extract_all
from .kernel import KernelParams, adaptive_kernel_forward, make_kernel
from .storage import write_npz

CHECKPOINT_VERSION = 1


@dataclass
class OutputHeadParams:
    W_out: Tensor
    b_out: Tensor

    def trainable(self) -> dict[str, Tensor]:
        return {"head.weight": self.W_out, "head.bias": self.b_out}


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def init_head(horizon: int, hidden: int, rng: np.random.Generator) -> OutputHeadParams:
    return OutputHeadParams(
        Tensor(xavier_uniform(horizon, hidden, rng), requires_grad=True),
        Tensor(np.zeros(horizon), requires_grad=True),
    )


def _step_inputs(x_seq: Tensor, W: Tensor, d_in: int) -> Tensor:
    """Input contribution ``W_x @ x_t`` for every step, as ``[B, n, 4u]``."""
    B, n, _ = x_seq.shape
    W_x = ad.take(W, slice(0, d_in), axis=W.ndim - 1)
    if W.ndim == 3:
        # per-sample weights: [B, 4u, d_in] @ [B, d_in, n]
        z = ad.matmul(W_x, ad.transpose(x_seq, (0, 2, 1)))
        return ad.transpose(z, (0, 2, 1))
    flat = ad.reshape(x_seq, (B * n, d_in))
    return ad.reshape(ad.matmul(flat, ad.transpose(W_x)), (B, n, W.shape[0]))


def _check_lstm_shapes(x_seq: Tensor, W: Tensor, b: Tensor) -> tuple[int, int, int, int, bool]:
    if x_seq.ndim != 3:
        raise ad.ShapeError(f"x_seq must be [B, n, d_in], got {x_seq.shape}")
    B, n, d_in = x_seq.shape
    four_u = W.shape[-2]
    u = four_u // 4
    if W.ndim not in (2, 3) or W.shape[-1] != d_in + u or four_u != 4 * u:
        raise ad.ShapeError(f"LSTM weight {W.shape} incompatible with input width {d_in}")
    per_sample = W.ndim == 3
    if per_sample and (W.shape[0] != B or b.shape != (B, four_u)):
        raise ad.ShapeError(f"per-sample parameters {W.shape}/{b.shape} do not match batch {B}")
    if not per_sample and b.shape != (four_u,):
        raise ad.ShapeError(f"bias {b.shape} does not match weight {W.shape}")
    return B, n, d_in, u, per_sample


def lstm_layer(x_seq: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, LstmState]:
    """One LSTM layer as a single differentiable node (backprop through time).

    Same contract as :func:`lstm_layer_reference`.
    """
    B, n, d_in, u, per_sample = _check_lstm_shapes(x_seq, W, b)
    X = x_seq.data
    W3 = W.data if per_sample else np.broadcast_to(W.data, (B,) + W.shape)
    b2 = b.data if per_sample else np.broadcast_to(b.data, (B, 4 * u))
    W_x, W_h = W3[:, :, :d_in], W3[:, :, d_in:]
    zx = np.matmul(W_x, X.transpose(0, 2, 1)).transpose(0, 2, 1) + b2[:, None, :]  # [B, n, 4u]

    out = np.empty((B, n, 2 * u))
    gates = np.empty((B, n, 4 * u))
    h_prev = np.zeros((B, n + 1, u))
    c_prev = np.zeros((B, u))
    cs = np.empty((B, n, u))
    tcs = np.empty((B, n, u))
    for t in range(n):
        z = zx[:, t] + np.matmul(W_h, h_prev[:, t, :, None])[..., 0]
        s = ad._sigmoid(z)
        g = np.tanh(z[:, 2 * u:3 * u])
        s[:, 2 * u:3 * u] = g
        gates[:, t] = s
        c = s[:, u:2 * u] * c_prev + s[:, :u] * g
        tc = np.tanh(c)
        h = s[:, 3 * u:] * tc
        cs[:, t], tcs[:, t], h_prev[:, t + 1] = c, tc, h
        out[:, t, :u], out[:, t, u:] = h, c
        c_prev = c

    def grad_fn(gout):
        dZ = np.empty((B, n, 4 * u))
        dh_next = np.zeros((B, u))
        dc_next = np.zeros((B, u))
        for t in range(n - 1, -1, -1):
            s = gates[:, t]
            i, f, g, o = s[:, :u], s[:, u:2 * u], s[:, 2 * u:3 * u], s[:, 3 * u:]
            tc = tcs[:, t]
            c_before = cs[:, t - 1] if t > 0 else 0.0
            dh = gout[:, t, :u] + dh_next
            dc = gout[:, t, u:] + dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :u] = dc * g * i * (1.0 - i)
            dz[:, u:2 * u] = dc * c_before * f * (1.0 - f)
            dz[:, 2 * u:3 * u] = dc * i * (1.0 - g * g)
            dz[:, 3 * u:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = np.matmul(dz[:, None, :], W_h)[:, 0]
        dX = np.matmul(dZ, W_x)  # [B, n, d_in]
        dW = np.concatenate([np.matmul(dZ.transpose(0, 2, 1), X),
                             np.matmul(dZ.transpose(0, 2, 1), h_prev[:, :n])], axis=2)
        db = dZ.sum(axis=1)
        if not per_sample:
            dW, db = dW.sum(axis=0), db.sum(axis=0)
        return dX, dW, db

    both = ad._make(out, (x_seq, W, b), "lstm_layer", grad_fn)
    seq = ad.take(both, slice(0, u), axis=2)
    last = ad.take(both, n - 1, axis=1)
    return seq, LstmState(ad.take(last, slice(0, u), axis=1), ad.take(last, slice(u, 2 * u), axis=1))


def lstm_layer_reference(x_seq: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, LstmState]:
    """Run one LSTM layer over ``x_seq`` ``[B, n, d_in]``.

    ``W`` is ``[4u, d_in + u]`` (shared) or ``[B, 4u, d_in + u]`` (one matrix per
    sample); ``b`` is ``[4u]`` or ``[B, 4u]`` accordingly. Returns the hidden
    sequence ``[B, n, u]`` and the final state.
    """
    B, n, d_in, u, per_sample = _check_lstm_shapes(x_seq, W, b)
    four_u = 4 * u
    zx = _step_inputs(x_seq, W, d_in)
    W_h = ad.take(W, slice(d_in, d_in + u), axis=W.ndim - 1)
    if not per_sample:
        W_hT = ad.transpose(W_h)
    h = ad.zeros((B, u))
    c = ad.zeros((B, u))
    hs = []
    for t in range(n):
        z = ad.take(zx, t, axis=1)
        if per_sample:
            rec = ad.reshape(ad.matmul(W_h, ad.reshape(h, (B, u, 1))), (B, four_u))
            z = ad.add(ad.add(z, rec), b)
        else:
            z = ad.bias_add(ad.add(z, ad.matmul(h, W_hT)), b)
        s = ad.sigmoid(z)
        i = ad.take(s, slice(0, u), axis=1)
        f = ad.take(s, slice(u, 2 * u), axis=1)
        g = ad.tanh(ad.take(z, slice(2 * u, 3 * u), axis=1))
        o = ad.take(s, slice(3 * u, 4 * u), axis=1)
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        hs.append(ad.reshape(h, (B, 1, u)))
    seq = hs[0] if n == 1 else ad.concat(hs, axis=1)
    return seq, LstmState(h, c)


def lstm_forward(x_seq: Tensor, params_per_layer, layer_fn=None) -> LstmState:
    """Stacked LSTM; returns the final-step state of the last layer."""
    layer_fn = layer_fn or lstm_layer
    if x_seq.ndim != 3:
        raise ad.ShapeError(f"x_seq must be [B, n, k], got {x_seq.shape}")
    seq = x_seq
    state = None
    for W, b in params_per_layer:
        seq, state = layer_fn(seq, W, b)
    return state


def output_head(state: LstmState, head: OutputHeadParams) -> Tensor:
    h = state.h
    if h.shape[1] != head.W_out.shape[1]:
        raise ad.ShapeError(f"hidden width {h.shape[1]} does not match head {head.W_out.shape}")
    return ad.bias_add(ad.matmul(h, ad.transpose(head.W_out)), head.b_out)


# ----------------------------------------------------------------------------
# composed model

@dataclass
class HyperEnergyModel:
    """Kernel (optional) + hypernetwork + parameter layout + output head."""

    kernel: KernelParams | None
    hypernet: HyperNetParams
    layout: LstmParamLayout
    head: OutputHeadParams
    window: int
    horizon: int
    theta_mode: str = "per_sample"
    variant: str = "hyperenergy_full"
    extra_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.hypernet.output_dim != self.layout.total_params:
            raise ad.ShapeError(
                f"hypernet output width {self.hypernet.output_dim} != LSTM parameter count "
                f"{self.layout.total_params}")
        expected_in = (self.kernel.num_points if self.kernel is not None
                       else self.window * self.layout.input_features)
        if self.hypernet.input_dim != expected_in:
            raise ad.ShapeError(f"hypernet input width {self.hypernet.input_dim} != {expected_in}")
        if self.theta_mode not in ("per_sample", "batch_mean"):
            raise ValueError(f"unknown theta_mode {self.theta_mode!r}")

    @property
    def num_features(self) -> int:
        return self.layout.input_features

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        if self.kernel is not None:
            out.update(self.kernel.trainable())
        out.update(self.hypernet.trainable())
        out.update(self.head.trainable())
        return out

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        if self.kernel is not None:
            out.update(self.kernel.tensors())
        out.update(self.hypernet.trainable())
        out.update(self.head.trainable())
        return out

    def generate_theta(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        flat = ad.reshape(x, (B, self.window * self.num_features))
        feats = adaptive_kernel_forward(flat, self.kernel) if self.kernel is not None else flat
        return hypernet_forward(feats, self.hypernet)

    def forward(self, x: Tensor) -> Tensor:
        return hyperenergy_forward(x, self)

    def meta(self) -> dict:
        k = self.kernel
        return {
            "kind": "hyperenergy",
            "variant": self.variant,
            "window": self.window,
            "horizon": self.horizon,
            "hidden_units": self.layout.hidden_units,
            "num_features": self.layout.input_features,
            "lstm_layers": self.layout.num_layers,
            "hypernet_hidden": [W.shape[0] for W, _ in self.hypernet.layers[:-1]],
            "activation": self.hypernet.activation,
            "theta_mode": self.theta_mode,
            "layout": self.layout.to_dict(),
            "kernel": None if k is None else {
                "mode": k.mode, "degree": k.degree, "gamma": k.gamma, "num_points": k.num_points},
            **self.extra_meta,
        }


def hyperenergy_forward(window: Tensor, model: HyperEnergyModel) -> Tensor:
    """Window ``[B, n, k]`` -> forecast ``[B, h]`` through one differentiable graph."""
    if window.ndim != 3 or window.shape[1:] != (model.window, model.num_features):
        raise ad.ShapeError(
            f"expected window [B, {model.window}, {model.num_features}], got {window.shape}")
    theta = model.generate_theta(window)
    if model.theta_mode == "batch_mean":
        theta = ad.mean(theta, axis=0)
    state = lstm_forward(window, extract_all(theta, model.layout))
    return output_head(state, model.head)


def build_hyperenergy(*, num_features: int, window: int = 24, horizon: int = 24,
                      hidden_units: int = 64, lstm_layers: int = 2, hypernet_hidden=(64, 64),
                      activation: str = "relu", kernel_mode: str | None = "learnable",
                      num_points: int = 64, degree: int = 2, gamma: float = 1.0,
                      theta_mode: str = "per_sample", seed: int = 0,
                      train_inputs: np.ndarray | None = None,
                      variant: str = "hyperenergy_full") -> HyperEnergyModel:
    """Construct a freshly initialized model. ``kernel_mode=None`` drops the kernel."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**32, size=3)
    layout = build_layout(hidden_units, num_features, lstm_layers)
    if kernel_mode is None:
        kernel = None
        in_dim = window * num_features
    else:
        kernel = make_kernel(num_points, num_features, window, degree=degree, gamma=gamma,
                             mode=kernel_mode, seed=int(seeds[0]), train_inputs=train_inputs)
        in_dim = num_points
    hypernet = hypernet_init(hypernet_hidden, in_dim, layout.total_params, activation, int(seeds[1]))
    head = init_head(horizon, hidden_units, np.random.default_rng(int(seeds[2])))
    return HyperEnergyModel(kernel, hypernet, layout, head, window, horizon, theta_mode, variant)


# ----------------------------------------------------------------------------
# checkpoints

def _pack_meta(meta: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)


def save_checkpoint(path, model, extra_arrays: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None, params: dict[str, np.ndarray] | None = None) -> Path:
    """Write every model tensor plus metadata to a ``.npz`` container.

    ``params`` substitutes stored values for the model's live tensors (for
    instance the best-epoch snapshot while training continues).
    """
    path = Path(path)
    if params is None:
        params = {name: t.data for name, t in model.tensors().items()}
    elif set(params) != set(model.tensors()):
        raise KeyError("params must cover exactly the model tensors")
    arrays = {f"param/{name}": np.asarray(arr) for name, arr in params.items()}
    for name, arr in (extra_arrays or {}).items():
        arrays[f"extra/{name}"] = np.asarray(arr)
    meta = {"format_version": CHECKPOINT_VERSION, "model": model.meta(), **(extra_meta or {})}
    arrays["__meta__"] = _pack_meta(meta)
    return write_npz(path, arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return ``(meta, params, extras)`` from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        extras = {k[len("extra/"):]: z[k].copy() for k in z.files if k.startswith("extra/")}
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    return meta, params, extras


def load_params(model, params: dict[str, np.ndarray]) -> None:
    """Copy arrays into the model's tensors in place."""
    tensors = model.tensors()
    missing = set(tensors) - set(params)
    if missing:
        raise KeyError(f"checkpoint lacks tensors: {sorted(missing)}")
    for name, t in tensors.items():
        arr = params[name]
        if arr.shape != t.shape:
            raise ad.ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data = np.array(arr, dtype=np.float64)


def params_digest(model) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.tensors().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
