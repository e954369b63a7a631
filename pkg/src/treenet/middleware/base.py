"""Common strategy interface sitting between routing and the application."""
from __future__ import annotations

import struct
from enum import Enum, IntEnum
from ipaddress import IPv4Address
from typing import TYPE_CHECKING, Callable

from ..wire import ZERO_IP, Category, Envelope

if TYPE_CHECKING:
    from ..node import NodeRuntime

Comparator = Callable[[bytes, bytes], int]


class StrategyKind(str, Enum):
    NONE = "none"
    INJECT = "inject"
    PUBSUB = "pubsub"
    TOPOLOGY = "topology"


class StrategyTag(IntEnum):
    NONE = 0
    INJECT = 1
    PUBSUB = 2
    TOPOLOGY = 3


class ConfigError(ValueError):
    pass


def int_metric(value: int) -> bytes:
    return struct.pack("!i", value)


def compare_int_metrics(a: bytes, b: bytes) -> int:
    x, y = struct.unpack("!i", a)[0], struct.unpack("!i", b)[0]
    return (x > y) - (x < y)


def pack_metric(m: bytes | None) -> bytes:
    m = m or b""
    return bytes([len(m)]) + m


def unpack_metric(buf: bytes, off: int) -> tuple[bytes | None, int]:
    n = buf[off]
    return (bytes(buf[off + 1: off + 1 + n]) or None), off + 1 + n


class Strategy:
    """Identity strategy: data messages pass through untouched."""

    kind = StrategyKind.NONE
    tag = StrategyTag.NONE
    period = 120_000
    wants_placement = False

    def __init__(self, period: int | None = None) -> None:
        if period is not None:
            self.period = period
        self.node: NodeRuntime | None = None

    def attach(self, node: "NodeRuntime") -> None:
        self.node = node

    @property
    def stale_after(self) -> int:
        return 2 * self.period

    # hooks -----------------------------------------------------------
    def on_active(self, first: bool) -> None:
        pass

    def on_tick(self) -> None:
        pass

    def on_frame(self, env: Envelope) -> None:
        pass

    def request_placement(self, temp_parent: IPv4Address, candidates) -> None:
        pass

    def deliver(self, env: Envelope) -> Envelope | None:
        """Filter an incoming data message before the application sees it."""
        return env

    # helpers ---------------------------------------------------------
    def send(self, dtype: int, payload: bytes, dest: IPv4Address, msg_id: int | None = None) -> bool:
        return self.node.send_data(dest, dtype, payload, msg_id=msg_id)

    def send_mw(self, dest: IPv4Address, op: int, body: bytes, *, link: bool = False) -> bool:
        payload = bytes([int(self.tag), op]) + body
        env = Envelope(Category.MIDDLEWARE, op, self.node.ap_ip, dest, payload, ZERO_IP, self.node.next_id())
        if link:
            return self.node.send_to_neighbor(env, dest)
        return self.node.route(env)

    def flood(self, op: int, body: bytes, exclude: IPv4Address | None = None) -> None:
        """Hop-by-hop relay over tree links; each frame goes to one neighbour."""
        for nb in self.node.neighbors():
            if nb != exclude:
                self.send_mw(nb, op, body, link=True)
