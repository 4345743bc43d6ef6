"""Fully connected hypernetwork that maps kernel features to the flat
parameter vector of the primary LSTM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {"relu": ad.relu, "swish": ad.swish}


def xavier_uniform(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class HyperNetParams:
    layers: list[tuple[Tensor, Tensor]]
    activation: str = "relu"
    output_dim: int = field(init=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        prev = None
        for W, b in self.layers:
            if b.shape != (W.shape[0],):
                raise ad.ShapeError(f"bias {b.shape} does not match weight {W.shape}")
            if prev is not None and W.shape[1] != prev:
                raise ad.ShapeError(f"layer widths do not chain: {prev} -> {W.shape}")
            prev = W.shape[0]
        self.output_dim = prev

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    def trainable(self) -> dict[str, Tensor]:
        out = {}
        for i, (W, b) in enumerate(self.layers):
            out[f"hypernet.{i}.weight"] = W
            out[f"hypernet.{i}.bias"] = b
        return out


def hypernet_init(hidden_sizes, input_dim: int, output_dim: int, activation: str = "relu",
                  seed=0) -> HyperNetParams:
    """Xavier-uniform weights, zero biases; ``len(hidden_sizes) + 1`` layers."""
    hidden_sizes = list(hidden_sizes)
    if not hidden_sizes:
        raise ValueError("hidden_sizes must be non-empty")
    widths = [input_dim, *hidden_sizes, output_dim]
    if min(widths) < 1:
        raise ValueError(f"all layer widths must be >= 1, got {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = Tensor(xavier_uniform(fan_out, fan_in, rng), requires_grad=True)
        b = Tensor(np.zeros(fan_out), requires_grad=True)
        layers.append((W, b))
    return HyperNetParams(layers, activation)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Row-wise affine map ``x @ W.T + b``."""
    return ad.bias_add(ad.matmul(x, ad.transpose(W)), b)


def hypernet_forward(features: Tensor, params: HyperNetParams) -> Tensor:
    """Map ``[B, input_dim]`` features to ``[B, P]``; the last layer has no activation."""
    if features.ndim != 2 or features.shape[1] != params.input_dim:
        raise ad.ShapeError(f"hypernet expects [B, {params.input_dim}] input, got {features.shape}")
    act = ACTIVATIONS[params.activation]
    h = features
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        h = linear(h, W, b)
        if i < last:
            h = act(h)
    return h
