"""Independent oracles and small utilities shared by the tests."""
import itertools
from collections import deque
from ipaddress import IPv4Address

from treenet.routing import INFINITY

ME = IPv4Address("10.0.0.1")
S = IPv4Address("10.0.1.1")   # advertising neighbour
O = IPv4Address("10.0.2.1")   # some other neighbour
D = IPv4Address("10.0.9.1")   # destination under test


def tree_adjacency(parent: dict[str, str]) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {}
    for c, p in parent.items():
        adj.setdefault(c, set()).add(p)
        adj.setdefault(p, set()).add(c)
    return adj


def bfs_routes(adj: dict[str, set[str]], src: str) -> dict[str, tuple[str, int]]:
    """dest -> (first hop, distance) by breadth-first search from ``src``."""
    out: dict[str, tuple[str, int]] = {}
    seen = {src}
    q = deque([(src, None, 0)])
    while q:
        u, first, d = q.popleft()
        for v in sorted(adj.get(u, ())):
            if v in seen:
                continue
            seen.add(v)
            hop = v if first is None else first
            out[v] = (hop, d + 1)
            q.append((v, hop, d + 1))
    return out


def route_mismatches(net, parent: dict[str, str]) -> list[str]:
    """Compare every node's table with BFS over the given tree."""
    adj = tree_adjacency(parent)
    ip = {k: n.ap_ip for k, n in net.nodes.items()}
    bad = []
    for src, node in net.nodes.items():
        for dst, (hop, dist) in bfs_routes(adj, src).items():
            e = node.table.get(ip[dst])
            if e is None or not e.reachable or e.hops != dist or e.next_hop != ip[hop]:
                bad.append(f"{src}->{dst}: have {e}, want hop={hop} dist={dist}")
    return bad


def loop_free(net) -> list[str]:
    """Follow next hops between every pair; each walk must end at the destination."""
    by_ip = {n.ap_ip: n for n in net.nodes.values()}
    limit = len(net.nodes) - 1
    bad = []
    for src in net.nodes.values():
        for dst in net.nodes.values():
            if src is dst:
                continue
            cur, steps = src, 0
            while cur is not dst and steps <= limit:
                e = cur.table.get(dst.ap_ip)
                if e is None or not e.reachable:
                    break
                cur = by_ip[e.next_hop]
                steps += 1
            if cur is not dst:
                bad.append(f"{src.id}->{dst.id} stops at {cur.id} after {steps}")
    return bad


def reference(stored, sender, hops, seq):
    """Rule table written out independently: returns (classification, resulting entry tuple)."""
    new_hops = INFINITY if seq % 2 or hops + 1 >= INFINITY else hops + 1
    new_seq = seq if new_hops < INFINITY or seq % 2 else seq + 1
    if stored is None:
        kind = "new-node" if new_hops < INFINITY else "minor"
        return kind, (sender, new_hops, new_seq)
    s_hop, s_hops, s_seq = stored
    if new_seq < s_seq:
        return "discarded", stored
    if new_seq == s_seq:
        if new_hops < s_hops:
            return "path-change", (sender, new_hops, s_seq)
        return "discarded", stored
    was_up = s_seq % 2 == 0 and s_hops < INFINITY
    now_up = new_hops < INFINITY
    result = (sender, new_hops, new_seq)
    if not now_up:
        return ("link-failure" if was_up else "minor"), result
    if not was_up or (s_hop, s_hops) != (sender, new_hops):
        return "path-change", result
    return "minor", result


STORED = [None] + [(hop, h, s) for hop in (S, O) for h in (1, 2, 3, 5) for s in (4, 8)] \
    + [(hop, INFINITY, s) for hop in (S, O) for s in (5, 9)]
ADVERTS = list(itertools.product((0, 1, 2, 3, 4, 254, INFINITY), (2, 3, 4, 5, 6, 7, 8, 9, 10)))
