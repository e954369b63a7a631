"""Root-steered tree shaping: the root picks each joiner's parent from its global view."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Callable

from ..lifecycle import ParentInfo
from ..wire import Envelope
from .base import Comparator, ConfigError, Strategy, StrategyKind, StrategyTag, pack_metric, unpack_metric

OP_REPORT = 1
OP_PLAR = 2  # joiner -> temporary parent: candidate list
OP_PLA = 3   # temporary parent -> root
OP_PAC = 4   # root -> temporary parent -> joiner

_CAND = struct.Struct("!4sBB")  # ap, hops to root, children
_PAIR = struct.Struct("!4s4s")


@dataclass(frozen=True)
class Candidate:
    ap_ip: IPv4Address
    hops: int
    children: int
    metric: bytes | None


@dataclass
class ViewEntry:
    metric: bytes | None
    parent: IPv4Address | None
    reported: int


Selector = Callable[[list[Candidate], dict[IPv4Address, ViewEntry]], IPv4Address]


def metric_selector(compare: Comparator) -> Selector:
    """Best metric first, then fewest hops, fewest children, lowest address."""
    def select(cands: list[Candidate], view: dict[IPv4Address, ViewEntry]) -> IPv4Address:
        best = None
        for c in sorted(cands, key=lambda c: (c.hops, c.children, int(c.ap_ip))):
            if c.metric is None:
                continue
            if best is None or compare(c.metric, best.metric) > 0:
                best = c
        return (best or min(cands, key=lambda c: (c.hops, c.children, int(c.ap_ip)))).ap_ip
    return select


def _pack_cands(cands: list[Candidate]) -> bytes:
    return bytes([len(cands)]) + b"".join(_CAND.pack(c.ap_ip.packed, min(c.hops, 255), min(c.children, 255))
                                          for c in cands)


def _unpack_cands(buf: bytes, off: int) -> tuple[list[Candidate], int]:
    n = buf[off]
    off += 1
    out = []
    for _ in range(n):
        ap, hops, children = _CAND.unpack_from(buf, off)
        out.append(Candidate(IPv4Address(ap), hops, children, None))
        off += _CAND.size
    return out, off


class TopologyStrategy(Strategy):
    kind = StrategyKind.TOPOLOGY
    tag = StrategyTag.TOPOLOGY
    wants_placement = True
    report_retry = 500
    report_retries = 5

    def __init__(self, comparator: Comparator | None, *, metric: bytes | None = None,
                 selector: Selector | None = None, period: int | None = None) -> None:
        if comparator is None:
            raise ConfigError("the topology strategy needs a metric comparator")
        super().__init__(period)
        self.compare = comparator
        self.metric = metric
        self.selector = selector or metric_selector(comparator)
        self.view: dict[IPv4Address, ViewEntry] = {}
        self.placements: list[tuple[IPv4Address, IPv4Address]] = []

    def set_metric(self, metric: bytes | None) -> None:
        self.metric = metric

    # -- periodic report -----------------------------------------------
    def _report(self) -> bool:
        node = self.node
        if node.is_root:
            self.view[node.ap_ip] = ViewEntry(self.metric, None, node.sim.now)
            return True
        if node.root_ip is None or node.parent_ap is None:
            return False
        body = node.parent_ap.packed + pack_metric(self.metric)
        if not self.send_mw(node.root_ip, OP_REPORT, body):
            node.sim.trace(node.id, "topology", report="no-route")
            return False
        return True

    def on_active(self, first: bool) -> None:
        self._report_soon(self.report_retries)

    def _report_soon(self, tries: int) -> None:
        # right after attaching, the parent's table may not have reached us yet
        if not self._report() and tries > 0 and self.node.operational:
            self.node.timer(self.report_retry, lambda: self._report_soon(tries - 1), "topology-report")

    def on_tick(self) -> None:
        if self.node.operational:
            self._report()

    # -- join placement ------------------------------------------------
    def request_placement(self, temp_parent: IPv4Address, candidates: list[ParentInfo]) -> None:
        cands = [Candidate(i.ap_ip, i.hops_to_root, i.child_count, None) for i in candidates]
        self.send_mw(temp_parent, OP_PLAR, _pack_cands(cands), link=True)

    def _decide(self, joiner: IPv4Address, cands: list[Candidate]) -> IPv4Address:
        horizon = self.node.sim.now - self.stale_after
        fresh = {ip: e for ip, e in self.view.items() if e.reported >= horizon or ip == self.node.ap_ip}
        enriched = [Candidate(c.ap_ip, c.hops, c.children, fresh[c.ap_ip].metric if c.ap_ip in fresh else None)
                    for c in cands]
        chosen = self.selector(enriched, fresh)
        if chosen not in {c.ap_ip for c in cands}:
            chosen = cands[0].ap_ip
        self.placements.append((joiner, chosen))
        self.node.sim.trace(self.node.id, "topology", joiner=joiner, assigned=chosen)
        return chosen

    def on_frame(self, env: Envelope) -> None:
        node = self.node
        body = env.payload[2:]
        op = env.payload[1] if len(env.payload) > 1 else 0
        if op == OP_REPORT and node.is_root:
            parent = IPv4Address(body[:4])
            metric, _ = unpack_metric(body, 4)
            self.view[env.src] = ViewEntry(metric, parent, node.sim.now)
        elif op == OP_PLAR:
            joiner = env.src
            if node.is_root:
                cands, _ = _unpack_cands(body, 0)
                self._send_pac(joiner, self._decide(joiner, cands))
            elif node.root_ip is None or not self.send_mw(node.root_ip, OP_PLA, joiner.packed + body):
                node.sim.trace(node.id, "topology", pla="no-route", joiner=joiner)
        elif op == OP_PLA and node.is_root:
            joiner = IPv4Address(body[:4])
            cands, _ = _unpack_cands(body, 4)
            chosen = self._decide(joiner, cands)
            if env.src == node.ap_ip:
                self._send_pac(joiner, chosen)
            else:
                self.send_mw(env.src, OP_PAC, _PAIR.pack(joiner.packed, chosen.packed))
        elif op == OP_PAC:
            joiner, chosen = (IPv4Address(x) for x in _PAIR.unpack_from(body))
            if joiner == node.ap_ip:
                node.on_placement(chosen)
            else:
                self._send_pac(joiner, chosen)

    def _send_pac(self, joiner: IPv4Address, chosen: IPv4Address) -> None:
        if joiner in self.node.child_map:
            self.send_mw(joiner, OP_PAC, _PAIR.pack(joiner.packed, chosen.packed), link=True)
