"""Proactive distance-vector routing with destination sequence numbers.

Even sequence numbers are issued by the destination itself (+2 per update);
an odd number is a failure mark (+1) placed by a node that lost the link.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address

INFINITY = 255


class Change(str, Enum):
    NEW_NODE = "new-node"
    PATH_CHANGE = "path-change"
    LINK_FAILURE = "link-failure"
    MINOR = "minor"
    DISCARDED = "discarded"

    @property
    def significant(self) -> bool:
        return self in (Change.NEW_NODE, Change.PATH_CHANGE, Change.LINK_FAILURE)


class UpdateKind(str, Enum):
    FRU = "FRU"
    PRU = "PRU"


class NoRoute(LookupError):
    pass


def inc_hops(h: int) -> int:
    return INFINITY if h >= INFINITY - 1 else h + 1


@dataclass
class RouteEntry:
    dest: IPv4Address
    next_hop: IPv4Address
    hops: int
    seq: int

    @property
    def reachable(self) -> bool:
        return self.seq % 2 == 0 and self.hops < INFINITY


Triple = tuple[IPv4Address, int, int]


@dataclass
class RoutingUpdate:
    kind: UpdateKind
    sender: IPv4Address
    advertised: list[Triple]


@dataclass
class RoutingTable:
    own_ip: IPv4Address
    own_seq: int = 0
    entries: dict[IPv4Address, RouteEntry] = field(default_factory=dict)
    pending: dict[IPv4Address, None] = field(default_factory=dict)
    threshold_fraction: float = 0.75

    def bump_own_seq(self) -> int:
        self.own_seq += 2
        return self.own_seq

    def refresh_self(self, advertised_seq: int) -> bool:
        """Someone advertised us with ``advertised_seq``; outrun it if needed.

        An echo of our current number is normal. A failure mark at or above it,
        or an even number we never issued (pre-restart state), is not.
        """
        if advertised_seq < self.own_seq or (advertised_seq == self.own_seq and advertised_seq % 2 == 0):
            return False
        self.own_seq = advertised_seq + (1 if advertised_seq % 2 else 2)
        return True

    def get(self, dest: IPv4Address) -> RouteEntry | None:
        return self.entries.get(dest)

    def apply_advertisement(self, sender: IPv4Address, dest: IPv4Address, hops: int, seq: int) -> Change:
        if dest == self.own_ip:
            return Change.DISCARDED
        new_hops = INFINITY if seq % 2 else inc_hops(hops)
        if new_hops == INFINITY and seq % 2 == 0:
            seq += 1  # an infinite distance with an even number is treated as a mark
        cur = self.entries.get(dest)
        if cur is None:
            self.entries[dest] = RouteEntry(dest, sender, new_hops, seq)
            if new_hops == INFINITY:
                return Change.MINOR
            self.pending[dest] = None
            return Change.NEW_NODE
        if seq < cur.seq:
            return Change.DISCARDED
        if seq == cur.seq:
            if new_hops < cur.hops:
                cur.next_hop, cur.hops = sender, new_hops
                self.pending[dest] = None
                return Change.PATH_CHANGE
            return Change.DISCARDED
        was_reachable = cur.reachable
        same_path = cur.next_hop == sender and cur.hops == new_hops
        cur.next_hop, cur.hops, cur.seq = sender, new_hops, seq
        if not cur.reachable:
            if was_reachable:
                self.pending[dest] = None
                return Change.LINK_FAILURE
            return Change.MINOR
        if not was_reachable or not same_path:
            self.pending[dest] = None
            return Change.PATH_CHANGE
        return Change.MINOR

    def mark_neighbor_unreachable(self, neighbor: IPv4Address) -> list[IPv4Address]:
        """Invalidate a broken neighbour and every route that runs through it."""
        out = []
        for dest, e in self.entries.items():
            if dest == neighbor or e.next_hop == neighbor:
                if e.reachable:
                    e.seq += 1
                    e.hops = INFINITY
                    self.pending[dest] = None
                    out.append(dest)
        return out

    def purge_unreachable(self, keep_via: set[IPv4Address]) -> list[IPv4Address]:
        gone = [d for d, e in self.entries.items() if not e.reachable and e.next_hop not in keep_via]
        for d in gone:
            del self.entries[d]
            self.pending.pop(d, None)
        return gone

    def clear(self) -> None:
        self.entries.clear()
        self.pending.clear()

    def triples(self, dests=None) -> list[Triple]:
        src = self.entries.values() if dests is None else (self.entries[d] for d in dests if d in self.entries)
        return [(e.dest, e.hops, e.seq) for e in src]

    def build_update(self, kind: UpdateKind) -> RoutingUpdate:
        """Bump our own number and build the periodic advertisement.

        A PRU whose changed entries reach ``threshold_fraction`` of the table is
        promoted to a FRU. Pending changes are cleared only by a FRU.
        """
        self.bump_own_seq()
        self_ad: Triple = (self.own_ip, 0, self.own_seq)
        if kind == UpdateKind.PRU:
            changed = [d for d in self.pending if d in self.entries]
            if not changed or len(changed) < self.threshold_fraction * len(self.entries):
                return RoutingUpdate(UpdateKind.PRU, self.own_ip, [self_ad] + self.triples(changed))
        self.pending.clear()
        return RoutingUpdate(UpdateKind.FRU, self.own_ip, [self_ad] + self.triples())

    def next_hop_address(self, dest: IPv4Address, parent_ap: IPv4Address | None,
                         child_map: dict[IPv4Address, IPv4Address]) -> IPv4Address | None:
        """Concrete address for the first hop toward ``dest``; ``None`` means local delivery."""
        if dest == self.own_ip:
            return None
        e = self.entries.get(dest)
        if e is None or not e.reachable:
            raise NoRoute(dest)
        if parent_ap is not None and e.next_hop == parent_ap:
            return parent_ap
        if e.next_hop in child_map:
            return child_map[e.next_hop]
        raise NoRoute(dest)

    def subtree(self, child_map: dict[IPv4Address, IPv4Address]) -> list[IPv4Address]:
        return [d for d, e in self.entries.items() if e.reachable and e.next_hop in child_map]
