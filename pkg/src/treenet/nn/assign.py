"""Coordinator-side neuron allocation."""
from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address

from .model import ModelSpec

NeuronId = tuple[int, int]


class AssignmentError(ValueError):
    pass


@dataclass
class WorkerInfo:
    ip: IPv4Address
    capacity: int
    quota: int | None = None


@dataclass
class Assignment:
    neurons: dict[IPv4Address, list[NeuronId]] = field(default_factory=dict)
    inputs: dict[IPv4Address, list[int]] = field(default_factory=dict)
    output_device: IPv4Address | None = None

    def owner(self) -> dict[NeuronId, IPv4Address]:
        return {nid: ip for ip, ids in self.neurons.items() for nid in ids}

    def devices_for_layer(self, layer: int, model: ModelSpec) -> list[IPv4Address]:
        """Devices holding at least one neuron of ``layer`` (layer 0 = generators)."""
        if layer == 0:
            return [ip for ip, idx in self.inputs.items() if idx]
        out: list[IPv4Address] = []
        for ip, ids in self.neurons.items():
            if any(l == layer for l, _ in ids) and ip not in out:
                out.append(ip)
        return out

    def consumers(self, layer: int, model: ModelSpec) -> list[IPv4Address]:
        """Who needs the outputs of ``layer``: holders of ``layer + 1``."""
        if layer >= model.output_layer:
            return []
        return self.devices_for_layer(layer + 1, model)


def largest_remainder(total: int, weights: list[int]) -> list[int]:
    if not weights:
        return []
    s = sum(weights)
    if s <= 0:
        raise AssignmentError("weights must sum to a positive value")
    exact = [total * w / s for w in weights]
    base = [int(x) for x in exact]
    left = total - sum(base)
    # ties broken by position (registration order)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def quotas_for(workers: list[WorkerInfo], hidden_total: int) -> list[int]:
    explicit = [w.quota for w in workers]
    if workers and all(q is not None for q in explicit):
        if sum(explicit) != hidden_total:  # type: ignore[arg-type]
            raise AssignmentError(f"explicit quotas sum to {sum(explicit)} but the model has "  # type: ignore[arg-type]
                                  f"{hidden_total} hidden neurons")
        return list(explicit)  # type: ignore[arg-type]
    return largest_remainder(hidden_total, [w.capacity for w in workers])


def assign_neurons(model: ModelSpec, workers: list[WorkerInfo], output_device: IPv4Address,
                   generators: list[IPv4Address]) -> Assignment:
    """Walk hidden neurons layer by layer and hand out contiguous runs.

    Output neurons all go to ``output_device``; inputs are split evenly over
    the generators in registration order.
    """
    hidden = model.hidden_ids()
    if hidden and not workers:
        raise AssignmentError("model has hidden neurons but no hidden workers registered")
    quotas = quotas_for(workers, len(hidden))
    out = Assignment(output_device=output_device)
    pos = 0
    for w, q in zip(workers, quotas):
        out.neurons.setdefault(w.ip, []).extend(hidden[pos:pos + q])
        pos += q
    out.neurons.setdefault(output_device, []).extend(model.output_ids())
    if not generators:
        raise AssignmentError("no input generators registered")
    split = largest_remainder(model.sizes[0], [1] * len(generators))
    pos = 0
    for g, n in zip(generators, split):
        out.inputs[g] = list(range(pos, pos + n))
        pos += n
    return out
