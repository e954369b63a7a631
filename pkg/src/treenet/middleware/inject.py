"""Metric-driven detours: data is wrapped and sent via the best-metric node."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Callable

from ..routing import INFINITY
from ..wire import ZERO_IP, Envelope
from .base import (Comparator, ConfigError, Strategy, StrategyKind, StrategyTag, pack_metric,
                   unpack_metric)

OP_REPORT = 1
OP_SNAPSHOT = 2
OP_UPDATE = 3

_ORIGIN = struct.Struct("!4sI")  # origin AP-IP, version

Suitability = Callable[[bytes | None, bytes], bool]
Intercept = Callable[[Envelope], bytes | None]


@dataclass
class MetricEntry:
    metric: bytes
    version: int
    refreshed: int


class InjectStrategy(Strategy):
    kind = StrategyKind.INJECT
    tag = StrategyTag.INJECT

    def __init__(self, comparator: Comparator | None, *, metric: bytes | None = None,
                 suitable: Suitability | None = None, period: int | None = None) -> None:
        if comparator is None:
            raise ConfigError("the inject strategy needs a metric comparator")
        super().__init__(period)
        self.compare = comparator
        self.metric = metric
        self.suitable = suitable or self._default_suitable
        self.version = 0
        self.registry: dict[IPv4Address, MetricEntry] = {}
        self.on_intercept: Intercept = lambda env: env.payload

    def _default_suitable(self, own: bytes | None, cand: bytes) -> bool:
        return own is None or self.compare(cand, own) > 0

    def set_metric(self, metric: bytes | None) -> None:
        self.metric = metric

    # -- registry maintenance ------------------------------------------
    def _origin_body(self, origin: IPv4Address, version: int, metric: bytes | None) -> bytes:
        return _ORIGIN.pack(origin.packed, version) + pack_metric(metric)

    def _store(self, origin: IPv4Address, version: int, metric: bytes | None) -> bool:
        if origin == self.node.ap_ip or metric is None:
            return False
        cur = self.registry.get(origin)
        if cur is not None and version < cur.version:
            return False
        fresh = cur is None or version > cur.version
        self.registry[origin] = MetricEntry(metric, version, self.node.sim.now)
        return fresh

    def fresh_entries(self) -> dict[IPv4Address, MetricEntry]:
        horizon = self.node.sim.now - self.stale_after
        return {ip: e for ip, e in self.registry.items() if e.refreshed >= horizon}

    def on_active(self, first: bool) -> None:
        parent = self.node.parent_ap
        if parent is not None:
            self.version += 1
            self.send_mw(parent, OP_REPORT, self._origin_body(self.node.ap_ip, self.version, self.metric), link=True)

    def on_tick(self) -> None:
        # refreshed even when unchanged so peers reset their staleness clock
        if self.metric is not None:
            self.version += 1
            self.flood(OP_UPDATE, self._origin_body(self.node.ap_ip, self.version, self.metric))

    def on_frame(self, env: Envelope) -> None:
        body = env.payload[2:]
        op = env.payload[1] if len(env.payload) > 1 else 0
        if op == OP_REPORT:
            origin, version = _ORIGIN.unpack_from(body)
            metric, _ = unpack_metric(body, _ORIGIN.size)
            origin = IPv4Address(origin)
            if self._store(origin, version, metric):
                self.flood(OP_UPDATE, body, exclude=env.src)
            self.send_mw(env.src, OP_SNAPSHOT, self._snapshot(exclude=origin), link=True)
        elif op == OP_SNAPSHOT:
            off, n = 1, body[0]
            for _ in range(n):
                origin, version = _ORIGIN.unpack_from(body, off)
                metric, off = unpack_metric(body, off + _ORIGIN.size)
                self._store(IPv4Address(origin), version, metric)
        elif op == OP_UPDATE:
            origin, version = _ORIGIN.unpack_from(body)
            metric, _ = unpack_metric(body, _ORIGIN.size)
            if self._store(IPv4Address(origin), version, metric):
                self.flood(OP_UPDATE, body, exclude=env.src)

    def _snapshot(self, exclude: IPv4Address) -> bytes:
        items = [(self.node.ap_ip, self.version, self.metric)] if self.metric is not None else []
        items += [(ip, e.version, e.metric) for ip, e in self.fresh_entries().items() if ip != exclude]
        return bytes([len(items)]) + b"".join(self._origin_body(ip, v, m) for ip, v, m in items)

    # -- routing decision ----------------------------------------------
    def select(self, final: IPv4Address) -> IPv4Address | None:
        """Outer destination for a message bound to ``final``, or None to send directly."""
        cands = self.fresh_entries()
        if not cands:
            return None

        def hops(ip: IPv4Address) -> int:
            e = self.node.table.get(ip)
            return e.hops if e is not None and e.reachable else INFINITY

        best_ip, best = None, None
        for ip in sorted(cands):
            e = cands[ip]
            if best is None:
                best_ip, best = ip, e
                continue
            c = self.compare(e.metric, best.metric)
            if c > 0 or (c == 0 and hops(ip) < hops(best_ip)):
                best_ip, best = ip, e
        if not self.suitable(self.metric, best.metric) or best_ip == final:
            return None
        return best_ip

    def send(self, dtype: int, payload: bytes, dest: IPv4Address, msg_id: int | None = None) -> bool:
        outer = self.select(dest)
        if outer is not None:
            if self.node.send_data(outer, dtype, payload, msg_id=msg_id, final=dest):
                return True
            self.node.sim.trace(self.node.id, "inject", fallback="direct", outer=outer, final=dest)
        return self.node.send_data(dest, dtype, payload, msg_id=msg_id)

    def deliver(self, env: Envelope) -> Envelope | None:
        if env.final == ZERO_IP or env.final == self.node.ap_ip:
            return env
        # we are the outer destination: unwrap exactly once and pass on
        payload = self.on_intercept(env)
        if payload is None:
            return None
        inner = Envelope(env.category, env.type, env.src, env.final, payload, ZERO_IP, env.id)
        self.node.route(inner)
        return None
