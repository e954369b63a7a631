"""Single-process forward pass used as the reference for distributed runs."""
from __future__ import annotations

import numpy as np

from .model import ModelSpec

_NP_ACT = {
    "identity": lambda x: x,
    "sigmoid": lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


def forward(model: ModelSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape != (model.sizes[0],):
        raise ValueError(f"expected {model.sizes[0]} inputs, got shape {x.shape}")
    for layer in range(1, model.n_layers):
        w = np.array([model.neurons[(layer, i)].weights for i in range(model.sizes[layer])])
        b = np.array([model.neurons[(layer, i)].bias for i in range(model.sizes[layer])])
        x = _NP_ACT[model.activation(layer)](w @ x + b)
    return x
