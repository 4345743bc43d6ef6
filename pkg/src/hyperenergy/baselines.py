"""Reference models trained by ordinary backpropagation on their own weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hypernet import ACTIVATIONS, linear, xavier_uniform
from .integration import build_layout
from .primary import OutputHeadParams, init_head, lstm_forward, output_head


@dataclass
class PlainLSTMModel:
    """Stacked LSTM whose gate weights are ordinary trainable leaves."""

    lstm: list[tuple[Tensor, Tensor]]
    head: OutputHeadParams
    window: int
    horizon: int
    num_features: int
    variant: str = "plain_lstm"

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        for i, (W, b) in enumerate(self.lstm):
            out[f"lstm.{i}.weight"] = W
            out[f"lstm.{i}.bias"] = b
        out.update(self.head.trainable())
        return out

    tensors = trainable

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1:] != (self.window, self.num_features):
            raise ad.ShapeError(f"expected window [B, {self.window}, {self.num_features}], got {x.shape}")
        return output_head(lstm_forward(x, self.lstm), self.head)

    def meta(self) -> dict:
        W0 = self.lstm[0][0]
        return {"kind": "plain_lstm", "variant": self.variant, "window": self.window,
                "horizon": self.horizon, "num_features": self.num_features,
                "hidden_units": W0.shape[0] // 4, "lstm_layers": len(self.lstm)}


def build_plain_lstm(*, num_features: int, window: int = 24, horizon: int = 24, hidden_units: int = 64,
                     lstm_layers: int = 2, seed: int = 0) -> PlainLSTMModel:
    rng = np.random.default_rng(seed)
    layout = build_layout(hidden_units, num_features, lstm_layers)
    lstm = []
    for sl in layout.layers:
        fan_out, fan_in = sl.weight_shape
        lstm.append((Tensor(xavier_uniform(fan_out, fan_in, rng), requires_grad=True),
                     Tensor(np.zeros(sl.bias_shape), requires_grad=True)))
    head = init_head(horizon, hidden_units, rng)
    return PlainLSTMModel(lstm, head, window, horizon, num_features)


@dataclass
class MLPModel:
    """Three fully connected layers on the flattened window."""

    layers: list[tuple[Tensor, Tensor]]
    window: int
    horizon: int
    num_features: int
    activation: str = "relu"
    variant: str = "mlp_baseline"
    extra: dict = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        for i, (W, b) in enumerate(self.layers):
            out[f"mlp.{i}.weight"] = W
            out[f"mlp.{i}.bias"] = b
        return out

    tensors = trainable

    def forward(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        h = ad.reshape(x, (B, self.window * self.num_features))
        act = ACTIVATIONS[self.activation]
        for i, (W, b) in enumerate(self.layers):
            h = linear(h, W, b)
            if i < len(self.layers) - 1:
                h = act(h)
        return h

    def meta(self) -> dict:
        return {"kind": "mlp", "variant": self.variant, "window": self.window, "horizon": self.horizon,
                "num_features": self.num_features, "activation": self.activation,
                "hidden": [W.shape[0] for W, _ in self.layers[:-1]]}


def build_mlp(*, num_features: int, window: int = 24, horizon: int = 24, hidden=(64, 64),
              activation: str = "relu", seed: int = 0) -> MLPModel:
    rng = np.random.default_rng(seed)
    widths = [window * num_features, *hidden, horizon]
    layers = [(Tensor(xavier_uniform(o, i, rng), requires_grad=True), Tensor(np.zeros(o), requires_grad=True))
              for i, o in zip(widths[:-1], widths[1:])]
    return MLPModel(layers, window, horizon, num_features, activation)
