"""MLP definitions, the text model format, and neuron activation."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu")


def activate(tag: str, x: float) -> float:
    if tag == "identity":
        return x
    if tag == "sigmoid":
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    if tag == "tanh":
        return math.tanh(x)
    if tag == "relu":
        return x if x > 0.0 else 0.0
    raise ValueError(f"unknown activation {tag!r}")


def neuron_output(weights: tuple[float, ...], bias: float, inputs: list[float], tag: str) -> float:
    # summation order is fixed by input index
    acc = 0.0
    for w, x in zip(weights, inputs):
        acc += w * x
    return activate(tag, acc + bias)


@dataclass(frozen=True)
class Neuron:
    layer: int
    index: int
    bias: float
    weights: tuple[float, ...]


@dataclass
class ModelSpec:
    sizes: list[int]
    activations: list[str]  # one per non-input layer
    neurons: dict[tuple[int, int], Neuron]

    def __post_init__(self) -> None:
        if len(self.sizes) < 2 or any(n <= 0 for n in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per non-input layer")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        for layer in range(1, len(self.sizes)):
            for i in range(self.sizes[layer]):
                n = self.neurons.get((layer, i))
                if n is None:
                    raise ValueError(f"missing neuron ({layer}, {i})")
                if len(n.weights) != self.sizes[layer - 1]:
                    raise ValueError(f"neuron ({layer}, {i}) has {len(n.weights)} weights, "
                                     f"expected {self.sizes[layer - 1]}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes)

    @property
    def output_layer(self) -> int:
        return len(self.sizes) - 1

    def activation(self, layer: int) -> str:
        return self.activations[layer - 1]

    def hidden_ids(self) -> list[tuple[int, int]]:
        return [(l, i) for l in range(1, self.output_layer) for i in range(self.sizes[l])]

    def output_ids(self) -> list[tuple[int, int]]:
        return [(self.output_layer, i) for i in range(self.sizes[-1])]

    @classmethod
    def uniform(cls, sizes: list[int], weight: float, bias: float, activation: str = "sigmoid") -> "ModelSpec":
        neurons = {(l, i): Neuron(l, i, bias, (weight,) * sizes[l - 1])
                   for l in range(1, len(sizes)) for i in range(sizes[l])}
        return cls(list(sizes), [activation] * (len(sizes) - 1), neurons)

    @classmethod
    def random(cls, rng: random.Random, sizes: list[int], activation: str | list[str] = "sigmoid") -> "ModelSpec":
        acts = [activation] * (len(sizes) - 1) if isinstance(activation, str) else list(activation)
        neurons = {}
        for l in range(1, len(sizes)):
            for i in range(sizes[l]):
                w = tuple(rng.uniform(-1.0, 1.0) for _ in range(sizes[l - 1]))
                neurons[(l, i)] = Neuron(l, i, rng.uniform(-1.0, 1.0), w)
        return cls(list(sizes), acts, neurons)


def dumps(model: ModelSpec) -> str:
    acts = model.activations
    tag = acts[0] if len(set(acts)) == 1 else ",".join(acts)
    lines = [f"layers {' '.join(map(str, model.sizes))} activation={tag}"]
    for (l, i), n in sorted(model.neurons.items()):
        lines.append(" ".join([str(l), str(i), repr(n.bias)] + [repr(w) for w in n.weights]))
    return "\n".join(lines) + "\n"


def loads(text: str) -> ModelSpec:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("layers"):
        raise ValueError("model file must start with a 'layers' header")
    header = lines[0].split()
    sizes, activation = [], "sigmoid"
    for tok in header[1:]:
        if tok.startswith("activation="):
            activation = tok.split("=", 1)[1]
        else:
            sizes.append(int(tok))
    acts = activation.split(",")
    if len(acts) == 1:
        acts = acts * (len(sizes) - 1)
    neurons = {}
    for ln in lines[1:]:
        parts = ln.split()
        layer, index, bias = int(parts[0]), int(parts[1]), float(parts[2])
        neurons[(layer, index)] = Neuron(layer, index, bias, tuple(float(w) for w in parts[3:]))
    return ModelSpec(sizes, acts, neurons)


def load(path: str | Path) -> ModelSpec:
    return loads(Path(path).read_text(encoding="utf-8"))


def input_value(seed: int, inference_id: int, index: int) -> float:
    """Deterministic pseudo-random input in [0, 1) for one cycle."""
    return random.Random(f"{seed}:input:{inference_id}:{index}").random()
