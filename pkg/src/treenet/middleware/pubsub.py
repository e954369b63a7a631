"""Integer-topic publish/subscribe over the tree.

Every node keeps a network-wide table of who publishes and subscribes to what.
Changes go out immediately as deltas; a periodic full snapshot repairs whatever
the deltas missed and keeps entries from going stale.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from ipaddress import IPv4Address

from ..wire import Envelope
from .base import ConfigError, Strategy, StrategyKind, StrategyTag

OP_REPORT = 1
OP_SNAPSHOT = 2
OP_DELTA = 3
OP_REFRESH = 4

_STAMP = struct.Struct("!4sI")  # origin AP-IP, per-origin stamp
_TOPIC = struct.Struct("!H")
DEFAULT_TOPIC_CAP = 16


class TopicOp(IntEnum):
    PUBLISH = 1
    WITHDRAW = 2
    SUBSCRIBE = 3
    UNSUBSCRIBE = 4


@dataclass
class TopicEntry:
    publishes: set[int] = field(default_factory=set)
    subscribes: set[int] = field(default_factory=set)
    stamp: int = 0
    refreshed: int = 0

    def apply(self, op: TopicOp, topic: int) -> None:
        if op == TopicOp.PUBLISH:
            self.publishes.add(topic)
        elif op == TopicOp.WITHDRAW:
            self.publishes.discard(topic)
        elif op == TopicOp.SUBSCRIBE:
            self.subscribes.add(topic)
        elif op == TopicOp.UNSUBSCRIBE:
            self.subscribes.discard(topic)


def _pack_topics(topics: set[int]) -> bytes:
    return bytes([len(topics)]) + b"".join(_TOPIC.pack(t) for t in sorted(topics))


def _unpack_topics(buf: bytes, off: int) -> tuple[set[int], int]:
    n = buf[off]
    off += 1
    return {_TOPIC.unpack_from(buf, off + 2 * i)[0] for i in range(n)}, off + 2 * n


class PubSubStrategy(Strategy):
    kind = StrategyKind.PUBSUB
    tag = StrategyTag.PUBSUB

    def __init__(self, config: dict | None = None, *, period: int | None = None,
                 topic_cap: int = DEFAULT_TOPIC_CAP) -> None:
        if config:
            raise ConfigError(f"the pubsub strategy takes no configuration (got {sorted(config)})")
        super().__init__(period)
        self.topic_cap = topic_cap
        self.local = TopicEntry()
        self.table: dict[IPv4Address, TopicEntry] = {}
        self._seen: dict[tuple[IPv4Address, int], None] = {}

    # -- local topic management ----------------------------------------
    def manage(self, op: TopicOp, topic: int) -> None:
        if topic < 0 or topic > 0xFFFF:
            raise ValueError(f"topic {topic} outside 0..65535")
        target = self.local.publishes if op in (TopicOp.PUBLISH, TopicOp.WITHDRAW) else self.local.subscribes
        if op in (TopicOp.PUBLISH, TopicOp.SUBSCRIBE) and topic not in target and len(target) >= self.topic_cap:
            raise ValueError(f"topic cap {self.topic_cap} reached")
        self.local.apply(op, topic)
        self.local.stamp += 1
        if self.node is not None and self.node.neighbors():
            # the full sets ride along so deltas reordered in flight cannot lose a change
            body = (_STAMP.pack(self.node.ap_ip.packed, self.local.stamp) + bytes([op]) + _TOPIC.pack(topic)
                    + _pack_topics(self.local.publishes) + _pack_topics(self.local.subscribes))
            self.flood(OP_DELTA, body)

    def publish(self, topic: int) -> None:
        self.manage(TopicOp.PUBLISH, topic)

    def withdraw(self, topic: int) -> None:
        self.manage(TopicOp.WITHDRAW, topic)

    def subscribe(self, topic: int) -> None:
        self.manage(TopicOp.SUBSCRIBE, topic)

    def unsubscribe(self, topic: int) -> None:
        self.manage(TopicOp.UNSUBSCRIBE, topic)

    # -- table ---------------------------------------------------------
    def fresh(self) -> dict[IPv4Address, TopicEntry]:
        horizon = self.node.sim.now - self.stale_after
        return {ip: e for ip, e in self.table.items() if e.refreshed >= horizon}

    def subscribers(self, topic: int) -> list[IPv4Address]:
        return sorted(ip for ip, e in self.fresh().items() if topic in e.subscribes)

    def publishers(self, topic: int) -> list[IPv4Address]:
        return sorted(ip for ip, e in self.fresh().items() if topic in e.publishes)

    def _entry(self, origin: IPv4Address) -> TopicEntry:
        e = self.table.get(origin)
        if e is None:
            e = self.table[origin] = TopicEntry()
        return e

    def _full_body(self, origin: IPv4Address, entry: TopicEntry) -> bytes:
        return (_STAMP.pack(origin.packed, entry.stamp) + _pack_topics(entry.publishes)
                + _pack_topics(entry.subscribes))

    def _read_full(self, buf: bytes, off: int) -> tuple[IPv4Address, int, set[int], set[int], int]:
        origin, stamp = _STAMP.unpack_from(buf, off)
        pubs, off = _unpack_topics(buf, off + _STAMP.size)
        subs, off = _unpack_topics(buf, off)
        return IPv4Address(origin), stamp, pubs, subs, off

    def _replace(self, origin: IPv4Address, stamp: int, pubs: set[int], subs: set[int]) -> bool:
        """Install a full snapshot; True when it carried something new."""
        if origin == self.node.ap_ip:
            return False
        e = self._entry(origin)
        if stamp < e.stamp:
            return False
        newer = stamp > e.stamp or not e.refreshed
        if stamp > e.stamp:
            e.publishes, e.subscribes, e.stamp = pubs, subs, stamp
        e.refreshed = self.node.sim.now
        return newer

    # -- hooks ---------------------------------------------------------
    def on_active(self, first: bool) -> None:
        parent = self.node.parent_ap
        if parent is not None:
            self.send_mw(parent, OP_REPORT, self._full_body(self.node.ap_ip, self.local), link=True)

    def on_tick(self) -> None:
        self.flood(OP_REFRESH, self._full_body(self.node.ap_ip, self.local))

    def on_frame(self, env: Envelope) -> None:
        body = env.payload[2:]
        op = env.payload[1] if len(env.payload) > 1 else 0
        if op in (OP_REPORT, OP_REFRESH):
            origin, stamp, pubs, subs, _ = self._read_full(body, 0)
            self._replace(origin, stamp, pubs, subs)
            # tree links: each copy arrives over exactly one link, so relaying never loops
            self.flood(OP_REFRESH, body, exclude=env.src)
            if op == OP_REPORT:
                self.send_mw(env.src, OP_SNAPSHOT, self._snapshot(exclude=origin), link=True)
        elif op == OP_SNAPSHOT:
            off, n = 1, body[0]
            for _ in range(n):
                origin, stamp, pubs, subs, off = self._read_full(body, off)
                self._replace(origin, stamp, pubs, subs)
        elif op == OP_DELTA:
            origin, stamp = _STAMP.unpack_from(body)
            origin = IPv4Address(origin)
            pubs, off = _unpack_topics(body, _STAMP.size + 3)
            subs, _ = _unpack_topics(body, off)
            if origin == self.node.ap_ip:
                return
            e = self._entry(origin)
            if stamp <= e.stamp:
                return
            e.publishes, e.subscribes, e.stamp = pubs, subs, stamp
            e.refreshed = self.node.sim.now
            self.flood(OP_DELTA, body, exclude=env.src)

    def _snapshot(self, exclude: IPv4Address) -> bytes:
        items = [(self.node.ap_ip, self.local)]
        items += [(ip, e) for ip, e in self.fresh().items() if ip != exclude]
        return bytes([len(items)]) + b"".join(self._full_body(ip, e) for ip, e in items)

    # -- data path -----------------------------------------------------
    def publish_data(self, topic: int, dtype: int, payload: bytes) -> int:
        """Send one copy per subscriber; returns the number of frames handed to routing."""
        if topic not in self.local.publishes:
            raise ValueError(f"node does not publish topic {topic}")
        msg_id = self.node.next_id()
        sent = 0
        for ip in self.subscribers(topic):
            if self.node.send_data(ip, dtype, payload, msg_id=msg_id):
                sent += 1
            else:
                self.node.sim.trace(self.node.id, "pubsub", dropped=ip, topic=topic)
        if topic in self.local.subscribes:
            self.node.send_data(self.node.ap_ip, dtype, payload, msg_id=msg_id)
        return sent

    def deliver(self, env: Envelope) -> Envelope | None:
        key = (env.src, env.id)
        if key in self._seen:
            return None
        self._seen[key] = None
        return env
