"""Slicing of the generated parameter vector into LSTM gate weights and biases.

Per layer the vector holds a ``[4u, d_in + u]`` weight block followed by a
``[4u]`` bias block, layers in order. Gate order along the ``4u`` axis is
(input, forget, cell, output).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LayerSlice:
    weight_offset: int
    weight_end: int
    bias_offset: int
    bias_end: int
    weight_shape: tuple[int, int]
    bias_shape: tuple[int]


@dataclass(frozen=True)
class LstmParamLayout:
    num_layers: int
    hidden_units: int
    input_features: int
    layers: tuple[LayerSlice, ...]
    total_params: int

    def to_dict(self) -> dict:
        return {"num_layers": self.num_layers, "hidden_units": self.hidden_units,
                "input_features": self.input_features, "total_params": self.total_params,
                "layers": [[sl.weight_offset, sl.weight_end, sl.bias_offset, sl.bias_end] for sl in self.layers]}


def build_layout(hidden_units: int, input_features: int, num_layers: int = 2) -> LstmParamLayout:
    if hidden_units < 1 or input_features < 1 or num_layers < 1:
        raise ValueError("hidden_units, input_features and num_layers must all be >= 1")
    u = hidden_units
    offset = 0
    layers = []
    for layer in range(num_layers):
        d_in = input_features if layer == 0 else u
        w_shape = (4 * u, d_in + u)
        w_end = offset + w_shape[0] * w_shape[1]
        b_end = w_end + 4 * u
        layers.append(LayerSlice(offset, w_end, w_end, b_end, w_shape, (4 * u,)))
        offset = b_end
    return LstmParamLayout(num_layers, u, input_features, tuple(layers), offset)


def extract_layer_params(theta: Tensor, layout: LstmParamLayout, layer: int) -> tuple[Tensor, Tensor]:
    """Differentiable views of one layer's weight and bias.

    ``theta`` is ``[P]`` or ``[B, P]``; a leading batch axis is preserved.
    """
    if not 0 <= layer < layout.num_layers:
        raise IndexError(f"layer {layer} out of range for {layout.num_layers}-layer layout")
    if theta.shape[-1] != layout.total_params:
        raise ad.ShapeError(f"theta has {theta.shape[-1]} entries, layout needs {layout.total_params}")
    sl = layout.layers[layer]
    W = ad.slice_view(theta, sl.weight_offset, sl.weight_end, sl.weight_shape)
    b = ad.slice_view(theta, sl.bias_offset, sl.bias_end, sl.bias_shape)
    return W, b


def extract_all(theta: Tensor, layout: LstmParamLayout) -> list[tuple[Tensor, Tensor]]:
    return [extract_layer_params(theta, layout, i) for i in range(layout.num_layers)]
