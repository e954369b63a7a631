"""One virtual device: interfaces, routing agent, lifecycle driver and layer stack."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import TYPE_CHECKING, Callable

from .lifecycle import (OPERATIONAL, Action, Ev, EventBuffer, ParentInfo, State, decode_ack,
                        encode_ack, rank_candidates, transition)
from .link import ConnectRefused, ConnectTimeout, DeviceProfile, LinkEvent, MacAddress, ScanResult, WifiLayer
from .radio import Radio
from .routing import INFINITY, Change, NoRoute, RoutingTable, UpdateKind
from .sim import EventKind, SimEvent, Simulator
from .wire import (BROADCAST_IP, ZERO_IP, Category, DataType, Envelope, LifecycleType, MalformedFrame,
                   MonitoringType, RoutingType, decode, decode_triples, encode_triples)

if TYPE_CHECKING:
    from .middleware.base import Strategy


@dataclass(frozen=True)
class Timers:
    routing_period: int = 60_000
    fru_every: int = 5
    middleware_period: int = 120_000
    pdr_window: int = 2_000
    crr_timeout: int = 1_000
    crr_retries: int = 2
    max_recovery_attempts: int = 3
    search_retry: int = 1_000
    placement_timeout: int = 3_000
    event_buffer: int = 32
    threshold_fraction: float = 0.75


_DURATIONS = struct.Struct("!III")


class Joiner:
    """PDR/PIR collection, ranking and the CRR/ACK handshake for one join attempt."""

    def __init__(self, node: "NodeRuntime", scan: list[ScanResult], recovery: bool,
                 on_done: Callable[[bool], None]) -> None:
        self.node = node
        self.recovery = recovery
        self.on_done = on_done
        self.quality = {r.ap_ip: r.quality for r in scan}
        self.infos: dict[IPv4Address, ParentInfo] = {}
        self.queue: list[ParentInfo] = []
        self.current: ParentInfo | None = None
        self.sta_ip: IPv4Address | None = None
        self.attempts = 0
        self.collecting = True
        self.active = True
        self.placed = False
        self.temp: ParentInfo | None = None
        self.timer: SimEvent | None = None

    def _arm(self, delay: int, fn: Callable[[], None]) -> None:
        if self.timer is not None:
            self.timer.cancel()
        self.timer = self.node.timer(delay, fn, "join")

    def start(self) -> None:
        for ap in self.quality:
            self.node.send_link(Category.LIFECYCLE, LifecycleType.PDR, ap)
        self._arm(self.node.timers.pdr_window, self._collected)

    def on_pir(self, env: Envelope) -> None:
        if not (self.active and self.collecting) or env.src not in self.quality:
            return
        self.infos[env.src] = ParentInfo.decode(env.src, env.payload, self.quality[env.src])
        if len(self.infos) == len(self.quality):
            self._collected()

    def _collected(self) -> None:
        if not (self.active and self.collecting):
            return
        self.collecting = False
        self.queue = rank_candidates(list(self.infos.values()))
        self.node.sim.trace(self.node.id, "join", op="ranked", candidates=[str(i.ap_ip) for i in self.queue])
        self._next()

    def _next(self) -> None:
        if self.timer is not None:
            self.timer.cancel()
        self.current = None
        if not self.queue:
            self._finish(False)
            return
        info = self.queue.pop(0)
        self._arm(self.node.profile.step_delay, lambda: self._connect(info))

    def _connect(self, info: ParentInfo) -> None:
        node = self.node
        if node.parent_ap is not None:
            node.drop_parent()
        try:
            self.sta_ip = node.wifi.connect_sta(node.id, info.ap_ip)
        except (ConnectRefused, ConnectTimeout) as exc:
            node.sim.trace(node.id, "join", op="connect-failed", ap=info.ap_ip, reason=type(exc).__name__)
            self._next()
            return
        self.current = info
        self.attempts = 0
        if self.recovery:
            # stale failure marks from the old branch would shadow the new parent's routes
            node.table.purge_unreachable(keep_via=set(node.child_map))
        self._send_crr()

    def _send_crr(self) -> None:
        self.attempts += 1
        self.node.send_link(Category.LIFECYCLE, LifecycleType.CRR, self.current.ap_ip, self.sta_ip.packed)
        self._arm(self.node.timers.crr_timeout, self._crr_timeout)

    def _crr_timeout(self) -> None:
        if not self.active or self.current is None:
            return
        if self.attempts <= self.node.timers.crr_retries:
            self._send_crr()
        else:
            self.node.sim.trace(self.node.id, "join", op="crr-timeout", ap=self.current.ap_ip)
            self._abandon()

    def _abandon(self) -> None:
        self.node.leave_association(self.current.ap_ip, keep_subtree=self.recovery)
        self._next()

    def on_ack(self, env: Envelope) -> None:
        if not self.active or self.current is None or env.src != self.current.ap_ip:
            return
        ok, root_ip, _ = decode_ack(env.payload)
        if self.timer is not None:
            self.timer.cancel()
        if not ok:
            self.node.sim.trace(self.node.id, "join", op="refused", ap=env.src)
            self._abandon()
            return
        self.node.adopt_parent(self.current.ap_ip, root_ip)
        strategy = self.node.strategy
        others = [i for i in self.infos.values() if i.accepting]
        if not self.recovery and not self.placed and strategy.wants_placement and len(others) > 1:
            self.placed = True
            self.temp = self.current
            strategy.request_placement(self.current.ap_ip, rank_candidates(others))
            self._arm(self.node.timers.placement_timeout, self._placement_timeout)
            return
        self._finish(True)

    def _placement_timeout(self) -> None:
        if self.active and self.current is self.temp:
            self.node.sim.trace(self.node.id, "join", op="placement-timeout", kept=self.temp.ap_ip)
            self._finish(True)

    def on_placement(self, assigned: IPv4Address) -> None:
        if not self.active or self.temp is None or self.current is not self.temp:
            return
        if self.timer is not None:
            self.timer.cancel()
        if assigned == self.temp.ap_ip or assigned not in self.infos:
            self._finish(True)
            return
        self.node.sim.trace(self.node.id, "join", op="switch", frm=self.temp.ap_ip, to=assigned)
        self.node.leave_association(self.temp.ap_ip, keep_subtree=False)
        self.queue = [self.infos[assigned], self.temp]
        self._next()

    def on_parent_lost(self, ap: IPv4Address) -> None:
        if self.active and self.current is not None and self.current.ap_ip == ap:
            self._next()

    def _finish(self, ok: bool) -> None:
        self.abort()
        self.on_done(ok)

    def abort(self) -> None:
        self.active = False
        if self.timer is not None:
            self.timer.cancel()


class NodeRuntime:
    def __init__(self, node_id: str, mac: MacAddress, profile: DeviceProfile, *, is_root: bool,
                 sim: Simulator, radio: Radio, wifi: WifiLayer, timers: Timers | None = None,
                 strategy: "Strategy | None" = None) -> None:
        from .middleware.base import Strategy

        self.id = node_id
        self.mac = MacAddress(mac)
        self.profile = profile
        self.is_root = is_root
        self.sim, self.radio, self.wifi = sim, radio, wifi
        self.timers = timers or Timers()
        self.ap = wifi.register(node_id, self.mac, profile)
        self.ap_ip = self.ap.ap_ip
        self.table = RoutingTable(self.ap_ip, threshold_fraction=self.timers.threshold_fraction)
        self.parent_ap: IPv4Address | None = None
        self.child_map: dict[IPv4Address, IPv4Address] = {}
        self.root_ip: IPv4Address | None = self.ap_ip if is_root else None
        self.state = State.INIT
        self.state_since = 0
        self.durations: dict[State, int] = {s: 0 for s in State}
        self.reported_integration = False
        self.buffer: EventBuffer[Ev] = EventBuffer(self.timers.event_buffer)
        self._drain_pending = False
        self.joiner: Joiner | None = None
        self._last_scan: list[ScanResult] = []
        self.recovery_attempts = 0
        self.empty_scans = 0
        self.alive = False
        self.epoch = 0
        self._msg_id = 0
        self._seen: dict[tuple[IPv4Address, int], None] = {}
        self.busy_until = 0
        self.jobs = 0
        self.ticks = 0
        self._routing_timer_on = False
        self._mw_timer_on = False
        self.observe_rx = False
        self.pings: dict[int, tuple[int, IPv4Address]] = {}
        self.strategy: Strategy = strategy or Strategy()
        self.strategy.attach(self)
        self.app = None
        radio.receivers[node_id] = self._on_frame
        wifi.listeners[node_id] = self._on_link_event

    # -- plumbing ------------------------------------------------------
    def timer(self, delay: int, fn: Callable[[], None], label: str = "") -> SimEvent:
        epoch = self.epoch

        def fire() -> None:
            if self.alive and self.epoch == epoch:
                fn()
        return self.sim.after(delay, fire, target=self.id, label=label)

    def next_id(self) -> int:
        self._msg_id += 1
        return self._msg_id

    @property
    def operational(self) -> bool:
        return self.state in OPERATIONAL

    def root_reachable(self) -> bool:
        if self.is_root:
            return True
        if self.root_ip is None:
            return False
        e = self.table.get(self.root_ip)
        return e is not None and e.reachable

    def hops_to_root(self) -> int:
        if self.is_root:
            return 0
        e = self.table.get(self.root_ip) if self.root_ip is not None else None
        return e.hops if e is not None and e.reachable else INFINITY

    def neighbors(self) -> list[IPv4Address]:
        out = [self.parent_ap] if self.parent_ap is not None else []
        return out + list(self.child_map)

    def is_neighbor(self, ap: IPv4Address) -> bool:
        return ap == self.parent_ap or ap in self.child_map or ap == self.wifi.sta[self.id].parent_ap_ip

    def link_address(self, neighbor: IPv4Address) -> IPv4Address:
        return self.child_map.get(neighbor, neighbor)

    # -- sending -------------------------------------------------------
    def transmit(self, env: Envelope, link_ip: IPv4Address) -> bool:
        if not self.alive:
            return False
        peer = self.wifi.resolve(link_ip)
        if peer is None:
            self.sim.trace(self.id, "drop", to=link_ip, reason="unknown-address", size=env.size)
            return False
        return self.radio.transmit(env.encode(), self.id, peer)

    def send_link(self, category: Category, typ: int, dst: IPv4Address, payload: bytes = b"") -> bool:
        env = Envelope(category, typ, self.ap_ip, dst, payload, ZERO_IP, self.next_id())
        return self.transmit(env, self.link_address(dst))

    def send_to_neighbor(self, env: Envelope, neighbor: IPv4Address) -> bool:
        return self.transmit(env, self.link_address(neighbor))

    def route(self, env: Envelope) -> bool:
        if env.dst == self.ap_ip:
            self.sim.after(0, lambda: self._deliver(env) if self.alive else None, target=self.id)
            return True
        if env.dst == BROADCAST_IP:
            self._seen[(env.src, env.id)] = None
            self._relay_broadcast(env, exclude=None)
            return True
        try:
            link = self.table.next_hop_address(env.dst, self.parent_ap, self.child_map)
        except NoRoute:
            self.sim.trace(self.id, "noroute", dst=env.dst, cat=env.category.name.lower(), type=int(env.type))
            return False
        return self.transmit(env, link)

    def send_data(self, dest: IPv4Address, dtype: int, payload: bytes, *, msg_id: int | None = None,
                  final: IPv4Address = ZERO_IP) -> bool:
        env = Envelope(Category.DATA, dtype, self.ap_ip, dest, payload, final,
                       self.next_id() if msg_id is None else msg_id)
        return self.route(env)

    def broadcast(self, dtype: int, payload: bytes) -> int:
        msg_id = self.next_id()
        self.send_data(BROADCAST_IP, dtype, payload, msg_id=msg_id)
        return msg_id

    def _relay_broadcast(self, env: Envelope, exclude: str | None) -> None:
        for nb in self.neighbors():
            link = self.link_address(nb)
            if exclude is not None and self.wifi.resolve(link) == exclude:
                continue
            self.transmit(env, link)

    def ping(self, dest: IPv4Address, probe: int) -> bool:
        e = self.table.get(dest)
        hops = e.hops if e is not None else INFINITY
        self.pings[probe] = (self.sim.now, dest)
        self.sim.trace(self.id, "obs", what="ping", probe=probe, peer=dest, hops=hops)
        return self.send_data(dest, DataType.PING, struct.pack("!IB", probe, min(hops, 255)))

    # -- receiving -----------------------------------------------------
    def _on_frame(self, frame: bytes, from_node: str) -> None:
        if not self.alive:
            return
        delay = self.profile.frame_delay
        if delay <= 0:
            self._handle(frame, from_node)
            return
        start = max(self.sim.now, self.busy_until)
        self.busy_until = start + delay
        epoch = self.epoch
        self.sim.at(self.busy_until, lambda: self._handle(frame, from_node) if self.epoch == epoch else None,
                    target=self.id, kind=EventKind.FRAME_DELIVERY, label="process")

    def _handle(self, frame: bytes, from_node: str) -> None:
        if not self.alive:
            return
        try:
            env = decode(frame)
        except MalformedFrame as exc:
            if self.observe_rx:
                self.sim.trace(self.id, "rx", cat="malformed", size=len(frame), reason=str(exc).replace(" ", "_"))
            return
        if self.observe_rx:
            fwd = env.category == Category.DATA and env.final_destination != self.ap_ip
            self.sim.trace(self.id, "rx", cat=env.category.name.lower(), type=env.type, size=env.size,
                           fwd=fwd, src=env.src)
        cat = env.category
        if cat == Category.ROUTING:
            self._on_routing(env)
        elif cat == Category.LIFECYCLE:
            self._on_lifecycle(env)
        elif env.dst == BROADCAST_IP:
            key = (env.src, env.id)
            if key in self._seen or env.src == self.ap_ip:
                return
            self._seen[key] = None
            self._relay_broadcast(env, exclude=from_node)
            self._deliver(env)
        elif env.dst == self.ap_ip:
            self._deliver(env)
        else:
            self.route(env)

    def _deliver(self, env: Envelope) -> None:
        if env.category == Category.MIDDLEWARE:
            self.strategy.on_frame(env)
        elif env.category == Category.MONITORING:
            self._on_monitoring(env)
        elif env.category == Category.DATA:
            if env.type == DataType.PING:
                self.send_data(env.src, DataType.PONG, env.payload)
                return
            if env.type == DataType.PONG:
                self._on_pong(env)
                return
            out = self.strategy.deliver(env)
            if out is not None and self.app is not None:
                self.app.on_data(out)

    def _on_pong(self, env: Envelope) -> None:
        probe, hops = struct.unpack("!IB", env.payload[:5])
        sent = self.pings.pop(probe, None)
        if sent is not None:
            self.sim.trace(self.id, "obs", what="rtt", probe=probe, peer=env.src, hops=hops,
                           rtt=self.sim.now - sent[0])

    def _on_monitoring(self, env: Envelope) -> None:
        if env.type == MonitoringType.STATE_DURATIONS and len(env.payload) >= _DURATIONS.size:
            init, search, join = _DURATIONS.unpack(env.payload[:_DURATIONS.size])
            self.sim.trace(self.id, "obs", what="integration", node_ip=env.src, init=init, search=search,
                           join=join, total=init + search + join)

    # -- routing agent -------------------------------------------------
    def _send_update(self, typ: RoutingType, triples, to: list[IPv4Address]) -> None:
        payload = encode_triples(triples)
        for nb in to:
            self.send_link(Category.ROUTING, typ, nb, payload)

    def _routing_tick(self) -> None:
        self.ticks += 1
        kind = UpdateKind.FRU if self.ticks % self.timers.fru_every == 0 else UpdateKind.PRU
        upd = self.table.build_update(kind)
        self._send_update(RoutingType[upd.kind.value], upd.advertised, self.neighbors())
        self.timer(self.timers.routing_period, self._routing_tick, "routing")

    def _start_periodic(self) -> None:
        if not self._routing_timer_on:
            self._routing_timer_on = True
            self.timer(self.timers.routing_period, self._routing_tick, "routing")
        if not self._mw_timer_on:
            self._mw_timer_on = True
            self.timer(self.strategy.period, self._mw_tick, "middleware")

    def _mw_tick(self) -> None:
        self.strategy.on_tick()
        self.timer(self.strategy.period, self._mw_tick, "middleware")

    def send_full_update(self, neighbor: IPv4Address) -> None:
        upd = self.table.build_update(UpdateKind.FRU)
        self._send_update(RoutingType.FRU, upd.advertised, [neighbor])

    def _triggered(self, dests: list[IPv4Address], exclude: IPv4Address | None = None,
                   self_to_all: bool = False) -> None:
        self_ad = (self.ap_ip, 0, self.table.own_seq)
        others = [nb for nb in self.neighbors() if nb != exclude]
        if dests or self_to_all:
            self._send_update(RoutingType.PRU, [self_ad] + self.table.triples(dests), others)
        if self_to_all and exclude is not None and exclude in self.neighbors():
            self._send_update(RoutingType.PRU, [self_ad], [exclude])

    def _on_routing(self, env: Envelope) -> None:
        sender = env.src
        if not self.is_neighbor(sender):
            self.sim.trace(self.id, "routing", ignored="non-neighbor", sender=sender)
            return
        try:
            triples = decode_triples(env.payload)
        except MalformedFrame:
            return
        significant = self._apply_triples(sender, triples)
        refreshed = any(d == self.ap_ip and self.table.refresh_self(s) for d, _, s in triples)
        if significant or refreshed:
            self._triggered(significant, exclude=sender, self_to_all=refreshed)

    def _apply_triples(self, sender: IPv4Address, triples) -> list[IPv4Address]:
        significant = []
        for dest, hops, seq in triples:
            if dest == self.ap_ip:
                continue
            change = self.table.apply_advertisement(sender, dest, hops, seq)
            if change.significant:
                significant.append(dest)
            if dest == self.root_ip and not self.is_root:
                self._root_safeguard(change)
        return significant

    def _root_safeguard(self, change: Change) -> None:
        if change == Change.LINK_FAILURE and self.operational:
            self.sim.trace(self.id, "lifecycle", safeguard="root-unreachable")
            self.push(Ev.ROOT_UNREACHABLE)
        elif change in (Change.PATH_CHANGE, Change.NEW_NODE) and self.state == State.RECOVERY_AWAIT \
                and self.root_reachable():
            self.push(Ev.ROOT_REACHABLE)

    # -- association bookkeeping ---------------------------------------
    def adopt_parent(self, ap: IPv4Address, root_ip: IPv4Address) -> None:
        self.parent_ap = ap
        self.root_ip = root_ip

    def drop_parent(self) -> None:
        """Voluntarily leave the current routing parent (used before re-attaching elsewhere)."""
        old = self.parent_ap
        self.parent_ap = None
        self.wifi.disconnect_sta(self.id)
        if old is not None:
            changed = self.table.mark_neighbor_unreachable(old)
            self._triggered(changed)

    def leave_association(self, ap: IPv4Address, keep_subtree: bool) -> None:
        if self.wifi.sta[self.id].parent_ap_ip == ap:
            self.wifi.disconnect_sta(self.id)
        if self.parent_ap == ap:
            self.parent_ap = None
        if keep_subtree:
            for dest in [d for d, e in self.table.entries.items() if e.next_hop == ap]:
                del self.table.entries[dest]
                self.table.pending.pop(dest, None)
        else:
            self.table.clear()

    def _on_link_event(self, ev: LinkEvent) -> None:
        if not self.alive:
            return
        if ev.kind == "parent-lost":
            if self.parent_ap == ev.peer_ip:
                self.parent_ap = None
                changed = self.table.mark_neighbor_unreachable(ev.peer_ip)
                self._triggered(changed)
                if self.joiner is not None and self.joiner.active:
                    self.joiner.on_parent_lost(ev.peer_ip)
                else:
                    self.push(Ev.PARENT_LOST)
            elif self.joiner is not None and self.joiner.active:
                self.joiner.on_parent_lost(ev.peer_ip)
        elif ev.kind == "child-left":
            for ap, sta in list(self.child_map.items()):
                if sta == ev.peer_ip:
                    del self.child_map[ap]
                    changed = self.table.mark_neighbor_unreachable(ap)
                    self._triggered(changed)
                    self.sim.trace(self.id, "child", op="left", child=ap)

    # -- lifecycle frames ----------------------------------------------
    def _accepting(self) -> bool:
        return (self.operational and self.root_reachable() and self.ap.up
                and len(self.ap.children) < self.ap.max_children)

    def _on_lifecycle(self, env: Envelope) -> None:
        t = env.type
        if t == LifecycleType.PDR:
            info = ParentInfo(self.ap_ip, self.hops_to_root(), len(self.child_map), self.state, self._accepting())
            self.send_link(Category.LIFECYCLE, LifecycleType.PIR, env.src, info.encode())
        elif t == LifecycleType.PIR:
            if self.joiner is not None:
                self.joiner.on_pir(env)
        elif t == LifecycleType.CRR:
            self._on_crr(env)
        elif t == LifecycleType.ACK:
            if self.joiner is not None:
                self.joiner.on_ack(env)
        elif env.src == self.parent_ap:
            if t == LifecycleType.TBA:
                self.push(Ev.TBA)
            elif t == LifecycleType.TRN:
                self._on_trn(env)
            elif t == LifecycleType.PRN:
                self.push(Ev.PRN)

    def _on_crr(self, env: Envelope) -> None:
        sta_ip = IPv4Address(env.payload[:4]) if len(env.payload) >= 4 else None
        associated = sta_ip is not None and sta_ip in self.ap.children.values()
        ok = associated and self.operational and self.root_reachable()
        root = self.root_ip or ZERO_IP
        payload = encode_ack(ok, root, self.hops_to_root())
        if sta_ip is None or not associated:
            return
        env_ack = Envelope(Category.LIFECYCLE, LifecycleType.ACK, self.ap_ip, env.src, payload, ZERO_IP, self.next_id())
        if not ok:
            self.transmit(env_ack, sta_ip)
            return
        fresh = self.child_map.get(env.src) != sta_ip
        self.child_map[env.src] = sta_ip
        self.transmit(env_ack, sta_ip)
        if fresh:
            self.sim.trace(self.id, "child", op="accepted", child=env.src, sta_ip=sta_ip)
            self.send_full_update(env.src)

    def _on_trn(self, env: Envelope) -> None:
        try:
            triples = decode_triples(env.payload)
        except MalformedFrame:
            triples = []
        self.table.purge_unreachable(keep_via=set(self.child_map))
        significant = self._apply_triples(env.src, triples)
        if significant:
            self._triggered(significant, exclude=env.src)
        self.push(Ev.TRN)

    # -- lifecycle driver ----------------------------------------------
    def start(self) -> None:
        if self.alive:
            return
        self.alive = True
        self.radio.up[self.id] = True
        self.wifi.start_ap(self.id)
        self.state_since = self.sim.now
        self.sim.trace(self.id, "state", to=self.state.value, ap_ip=self.ap_ip)
        self.timer(self.profile.step_delay, lambda: self.push(Ev.START), "boot")

    def kill(self) -> None:
        if not self.alive:
            return
        self.sim.trace(self.id, "obs", what="killed")
        self.alive = False
        self.epoch += 1
        if self.joiner is not None:
            self.joiner.abort()
        self.wifi.kill(self.id)

    def push(self, ev: Ev) -> None:
        self.buffer.push(ev)
        if not self._drain_pending:
            self._drain_pending = True
            self.timer(0, self._drain, "lifecycle")

    def _drain(self) -> None:
        self._drain_pending = False
        for ev in self.buffer.drain():
            res = transition(self.state, ev, self.is_root)
            if res is None:
                self.sim.trace(self.id, "lifecycle", ignored=ev.value, state=self.state.value)
                continue
            new_state, actions = res
            self._set_state(new_state, ev)
            for act in actions:
                self._run(act)

    def _set_state(self, new: State, ev: Ev) -> None:
        now = self.sim.now
        self.durations[self.state] += now - self.state_since
        old = self.state
        self.state, self.state_since = new, now
        if old != new:
            self.sim.trace(self.id, "state", frm=old.value, to=new.value, ev=ev.value)

    def _run(self, act: Action) -> None:
        if act == Action.BECOME_ROOT:
            self._start_periodic()
            self._activated(first=True)
        elif act == Action.SCAN:
            delay = self.profile.step_delay + (self.timers.search_retry if self.empty_scans else 0)
            self.timer(delay, self._scan, "scan")
        elif act == Action.JOIN:
            self._begin_join(self._last_scan, recovery=False)
        elif act == Action.ANNOUNCE:
            if self.parent_ap is not None:
                self.send_full_update(self.parent_ap)
            self._start_periodic()
            first = not self.reported_integration
            if first:
                self._report_integration()
            self._activated(first=first)
        elif act == Action.SEND_TBA:
            for child in list(self.child_map):
                self.send_link(Category.LIFECYCLE, LifecycleType.TBA, child)
        elif act == Action.SEND_TRN:
            payload = encode_triples(self.table.triples())
            for child in list(self.child_map):
                self.send_link(Category.LIFECYCLE, LifecycleType.TRN, child, payload)
            self._activated(first=False)
        elif act == Action.RECOVER:
            if self.parent_ap is not None:
                self.drop_parent()
            self.recovery_attempts = 0
            self._recovery_attempt()
        elif act == Action.RESTART:
            self._restart()
        elif act == Action.ABORT_JOIN:
            if self.joiner is not None:
                self.joiner.abort()

    def _activated(self, first: bool) -> None:
        self.strategy.on_active(first)
        if self.app is not None:
            self.app.on_active(first)

    def _scan(self) -> None:
        results = self.wifi.scan(self.id)
        self.sim.trace(self.id, "scan", found=len(results))
        self._last_scan = results
        if results:
            self.empty_scans = 0
            self.push(Ev.CANDIDATES_FOUND)
        else:
            self.empty_scans += 1
            self.push(Ev.NO_CANDIDATES)

    def _begin_join(self, scan: list[ScanResult], recovery: bool) -> None:
        def done(ok: bool) -> None:
            if recovery:
                self._recovery_done(ok)
            else:
                self.push(Ev.JOINED if ok else Ev.JOIN_FAILED)
        self.joiner = Joiner(self, scan, recovery, done)
        self.joiner.start()

    def on_placement(self, assigned: IPv4Address) -> None:
        if self.joiner is not None:
            self.joiner.on_placement(assigned)

    def _recovery_attempt(self) -> None:
        self.recovery_attempts += 1

        def scan() -> None:
            results = self.wifi.scan(self.id)
            self.sim.trace(self.id, "scan", found=len(results), recovery=self.recovery_attempts)
            if results:
                self._begin_join(results, recovery=True)
            else:
                self._recovery_done(False)
        self.timer(self.profile.step_delay, scan, "recovery-scan")

    def _recovery_done(self, ok: bool) -> None:
        if ok:
            self.table.purge_unreachable(keep_via=set(self.child_map))
            self.send_full_update(self.parent_ap)
            self.push(Ev.RECOVERED)
        elif self.recovery_attempts < self.timers.max_recovery_attempts:
            self.timer(self.timers.search_retry, self._recovery_attempt, "recovery-retry")
        else:
            self.push(Ev.RECOVERY_FAILED)

    def _restart(self) -> None:
        for child in list(self.child_map):
            self.send_link(Category.LIFECYCLE, LifecycleType.PRN, child)

        def reset() -> None:
            self.wifi.stop_ap(self.id)
            self.wifi.start_ap(self.id)
            self.child_map.clear()
            self.table.clear()
            self.root_ip = None
            self.push(Ev.RESTART_DONE)
        self.timer(self.profile.step_delay, reset, "restart")

    def _report_integration(self) -> None:
        self.reported_integration = True
        d = self.durations
        init, search = d[State.INIT], d[State.SEARCH]
        join = d[State.JOIN_NETWORK]
        self.sim.trace(self.id, "obs", what="integrated", init=init, search=search, join=join)
        self._send_durations(_DURATIONS.pack(init, search, join), 5)

    def _send_durations(self, body: bytes, tries: int) -> None:
        # the parent's first table update can trail the association by a few frames
        if self.root_ip is None or not self.operational:
            return
        env = Envelope(Category.MONITORING, MonitoringType.STATE_DURATIONS, self.ap_ip, self.root_ip,
                       body, ZERO_IP, self.next_id())
        if not self.route(env) and tries > 0:
            self.timer(500, lambda: self._send_durations(body, tries - 1), "durations")

    # -- jobs ----------------------------------------------------------
    def job_started(self) -> None:
        self.jobs += 1
        if self.jobs == 1:
            self.push(Ev.JOB_STARTED)

    def job_finished(self) -> None:
        self.jobs = max(0, self.jobs - 1)
        if self.jobs == 0:
            self.push(Ev.JOB_FINISHED)
