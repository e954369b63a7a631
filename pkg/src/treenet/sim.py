"""Deterministic discrete-event engine.

Virtual time is an integer number of milliseconds. Events with the same
``fire_at`` run in insertion order.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable


class EventKind(str, Enum):
    FRAME_DELIVERY = "frame-delivery"
    TIMER = "timer"
    NODE_START = "node-start"
    NODE_KILL = "node-kill"
    LINK_CHANGE = "link-change"
    OBSERVATION = "observation"


class SchedulingError(ValueError):
    pass


@dataclass(eq=False)
class SimEvent:
    fire_at: int
    target: str | None
    kind: EventKind
    action: Callable[[], Any] | None = None
    label: str = ""
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class TraceRecord:
    t: int
    node: str
    kind: str
    fields: dict[str, Any] = field(default_factory=dict)

    def detail(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.fields.items())

    def line(self) -> str:
        return f"t={self.t} node={self.node} kind={self.kind} detail={self.detail()}"


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


def parse_trace_line(line: str) -> TraceRecord:
    """Inverse of :meth:`TraceRecord.line`; field values stay strings."""
    head, _, detail = line.rstrip("\n").partition(" detail=")
    parts = dict(p.split("=", 1) for p in head.split())
    fields: dict[str, Any] = {}
    for tok in detail.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            fields[k] = v
    return TraceRecord(int(parts["t"]), parts["node"], parts["kind"], fields)


class Simulator:
    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._counter = itertools.count()
        self.records: list[TraceRecord] = []
        self.sinks: list[Callable[[TraceRecord], None]] = []
        self.consumed = 0

    # -- queue ---------------------------------------------------------
    def schedule(self, event: SimEvent) -> SimEvent:
        if event.fire_at < self.now:
            raise SchedulingError(f"event at t={event.fire_at} is before now={self.now}")
        heapq.heappush(self._queue, (event.fire_at, next(self._counter), event))
        return event

    def at(self, fire_at: int, action: Callable[[], Any], *, target: str | None = None,
           kind: EventKind = EventKind.TIMER, label: str = "") -> SimEvent:
        return self.schedule(SimEvent(int(fire_at), target, kind, action, label))

    def after(self, delay: int, action: Callable[[], Any], *, target: str | None = None,
              kind: EventKind = EventKind.TIMER, label: str = "") -> SimEvent:
        return self.at(self.now + max(0, int(delay)), action, target=target, kind=kind, label=label)

    def peek(self) -> SimEvent | None:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][2] if self._queue else None

    def pending(self) -> list[SimEvent]:
        return [e for _, _, e in sorted(self._queue) if not e.cancelled]

    def step(self) -> SimEvent | None:
        """Consume the head event; ``None`` means the queue is exhausted."""
        head = self.peek()
        if head is None:
            return None
        heapq.heappop(self._queue)
        self.now = head.fire_at
        self.consumed += 1
        if head.action is not None:
            head.action()
        return head

    def run_until(self, t_end: int) -> int:
        n = 0
        while True:
            head = self.peek()
            if head is None or head.fire_at > t_end:
                return n
            self.step()
            n += 1

    def run(self, max_events: int | None = None) -> int:
        n = 0
        while self.step() is not None:
            n += 1
            if max_events is not None and n >= max_events:
                break
        return n

    # -- trace ---------------------------------------------------------
    def trace(self, node: str, kind: str, **fields: Any) -> TraceRecord:
        rec = TraceRecord(self.now, node, kind, fields)
        self.records.append(rec)
        for sink in self.sinks:
            sink(rec)
        return rec

    def trace_lines(self) -> Iterable[str]:
        return (r.line() for r in self.records)
