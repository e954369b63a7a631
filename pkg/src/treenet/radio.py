"""Virtual radio: visibility graph, lossy links, latency sampling.

Each directed link owns its own PRNG, seeded from ``(seed, src, dst)``, so
adding traffic on one link never perturbs the draws of another.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable

from .sim import EventKind, Simulator


@dataclass(frozen=True)
class LinkParams:
    loss: float = 0.0
    latency_base: int = 15
    latency_jitter: int = 10
    quality: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError(f"loss probability {self.loss} outside [0, 1]")
        if self.latency_base < 0 or self.latency_jitter < 0:
            raise ValueError("latency parameters must be non-negative")


def link_rng(seed: int, src: str, dst: str) -> random.Random:
    return random.Random(f"{seed}/{src}->{dst}")


def sample_link(rng: random.Random, params: LinkParams) -> int | None:
    """One transmission draw: latency in ms, or ``None`` when the frame is lost.

    The loss draw always happens; the jitter draw only for delivered frames.
    """
    if rng.random() < params.loss:
        return None
    jitter = rng.randint(-params.latency_jitter, params.latency_jitter) if params.latency_jitter else 0
    return max(0, params.latency_base + jitter)


Receiver = Callable[[bytes, str], None]
DropFilter = Callable[[bytes, str, str], bool]


@dataclass
class LinkCounters:
    transmitted: int = 0
    delivered: int = 0
    dropped: int = 0


class Radio:
    def __init__(self, sim: Simulator, seed: int = 0, default: LinkParams | None = None) -> None:
        self.sim = sim
        self.seed = seed
        self.default = default or LinkParams()
        self.up: dict[str, bool] = {}
        self._visible: dict[str, set[str]] = {}
        self._params: dict[frozenset[str], LinkParams] = {}
        self._rngs: dict[tuple[str, str], random.Random] = {}
        self.receivers: dict[str, Receiver] = {}
        self.counters: dict[tuple[str, str], LinkCounters] = {}
        self.drop_reasons: Counter[str] = Counter()
        self.drop_filters: list[DropFilter] = []
        self.visibility_listeners: list[Callable[[str, str, bool], None]] = []

    # -- topology ------------------------------------------------------
    def add_node(self, node: str) -> None:
        self.up.setdefault(node, False)
        self._visible.setdefault(node, set())

    def set_visibility(self, a: str, b: str, visible: bool, params: LinkParams | None = None) -> None:
        if a == b:
            raise ValueError("a node cannot be made visible to itself")
        self.add_node(a)
        self.add_node(b)
        key = frozenset((a, b))
        if params is not None:
            self._params[key] = params
        was = b in self._visible[a]
        if visible:
            self._visible[a].add(b)
            self._visible[b].add(a)
        else:
            self._visible[a].discard(b)
            self._visible[b].discard(a)
        if was != visible:
            self.sim.trace("env", "visibility", a=a, b=b, visible=visible)
            for cb in self.visibility_listeners:
                cb(a, b, visible)

    def visible(self, a: str, b: str) -> bool:
        return b in self._visible.get(a, ())

    def neighbours(self, a: str) -> list[str]:
        return sorted(self._visible.get(a, ()))

    def params(self, a: str, b: str) -> LinkParams:
        return self._params.get(frozenset((a, b)), self.default)

    def rng(self, src: str, dst: str) -> random.Random:
        key = (src, dst)
        if key not in self._rngs:
            self._rngs[key] = link_rng(self.seed, src, dst)
        return self._rngs[key]

    # -- frames --------------------------------------------------------
    def transmit(self, frame: bytes, src: str, dst: str) -> bool:
        """Send one frame over the air. Returns True if a delivery was scheduled."""
        if not self.up.get(src, False):
            raise RuntimeError(f"transmit from node {src} whose radio is down")
        ctr = self.counters.setdefault((src, dst), LinkCounters())
        ctr.transmitted += 1
        if not self.visible(src, dst):
            self._drop(ctr, src, dst, "no-visibility", frame)
            return False
        for flt in self.drop_filters:
            if flt(frame, src, dst):
                self._drop(ctr, src, dst, "filtered", frame)
                return False
        latency = sample_link(self.rng(src, dst), self.params(src, dst))
        if latency is None:
            self._drop(ctr, src, dst, "loss", frame)
            return False
        self.sim.after(latency, lambda: self._arrive(frame, src, dst, ctr),
                       target=dst, kind=EventKind.FRAME_DELIVERY)
        return True

    def _arrive(self, frame: bytes, src: str, dst: str, ctr: LinkCounters) -> None:
        if not self.up.get(dst, False):
            self._drop(ctr, src, dst, "dst-down", frame)
            return
        if not self.visible(src, dst):
            self._drop(ctr, src, dst, "no-visibility", frame)
            return
        ctr.delivered += 1
        receiver = self.receivers.get(dst)
        if receiver is not None:
            receiver(frame, src)

    def _drop(self, ctr: LinkCounters, src: str, dst: str, reason: str, frame: bytes) -> None:
        ctr.dropped += 1
        self.drop_reasons[reason] += 1
        self.sim.trace(src, "drop", to=dst, reason=reason, size=len(frame))

    def totals(self) -> LinkCounters:
        out = LinkCounters()
        for c in self.counters.values():
            out.transmitted += c.transmitted
            out.delivered += c.delivered
            out.dropped += c.dropped
        return out
