"""Dual-interface Wi-Fi overlay: one softAP for children, one STA for the parent.

The :class:`WifiLayer` is the single authority on which STA is associated with
which AP; nodes learn about association changes through link events.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address
from typing import Callable

from .radio import Radio
from .sim import EventKind, Simulator

SUBNET_MASK = IPv4Address("255.255.255.0")
SSID_PREFIX = "TREENET"


class MacAddress(tuple):
    def __new__(cls, value: str | bytes | tuple) -> "MacAddress":
        if isinstance(value, str):
            try:
                octets = tuple(int(p, 16) for p in value.replace("-", ":").split(":"))
            except ValueError:
                raise ValueError(f"invalid MAC address {value!r}") from None
        else:
            octets = tuple(value)
        if len(octets) != 6 or any(not 0 <= o <= 255 for o in octets):
            raise ValueError(f"invalid MAC address {value!r}")
        return super().__new__(cls, octets)

    def __str__(self) -> str:
        return ":".join(f"{o:02x}" for o in self)


def derive_ap_ip(mac: MacAddress) -> IPv4Address:
    """10.<mac[4]>.<mac[5]>.1 -- also the node's gateway address."""
    mac = MacAddress(mac)
    return IPv4Address(f"10.{mac[4]}.{mac[5]}.1")


def same_subnet(a: IPv4Address, b: IPv4Address) -> bool:
    return int(a) >> 8 == int(b) >> 8


def find_ap_collisions(macs: dict[str, MacAddress]) -> list[tuple[str, str]]:
    seen: dict[IPv4Address, str] = {}
    out = []
    for node, mac in macs.items():
        ip = derive_ap_ip(mac)
        if ip in seen:
            out.append((seen[ip], node))
        else:
            seen[ip] = node
    return out


class DeviceKind(str, Enum):
    ESP8266 = "class-8266"
    ESP32 = "class-32"
    PI = "class-pi"


@dataclass(frozen=True)
class DeviceProfile:
    kind: DeviceKind
    capacity: int
    max_children: int
    compute_delay_per_neuron: int  # ms
    frame_delay: int  # ms of serial processing per handled frame
    step_delay: int  # ms per lifecycle state-handling step

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")


DEFAULT_PROFILES = {
    DeviceKind.ESP8266: DeviceProfile(DeviceKind.ESP8266, 1, 4, 8, 4, 260),
    DeviceKind.ESP32: DeviceProfile(DeviceKind.ESP32, 2, 10, 3, 2, 125),
    DeviceKind.PI: DeviceProfile(DeviceKind.PI, 3, 16, 1, 1, 100),
}


class ConnectRefused(Exception):
    pass


class ConnectTimeout(Exception):
    pass


@dataclass
class ApInterface:
    ssid: str
    ap_ip: IPv4Address
    max_children: int
    up: bool = False
    dhcp_next: int = 2
    children: dict[str, IPv4Address] = field(default_factory=dict)  # child node -> STA IP

    def start(self) -> None:
        self.up = True
        self.dhcp_next = 2
        self.children.clear()

    def allocate(self) -> IPv4Address:
        taken = {int(ip) & 0xFF for ip in self.children.values()}
        host = self.dhcp_next
        for _ in range(253):
            if host not in taken:
                self.dhcp_next = host + 1 if host < 254 else 2
                return IPv4Address(int(self.ap_ip) - 1 + host)
            host = host + 1 if host < 254 else 2
        raise ConnectRefused("DHCP pool exhausted")


class StaState(str, Enum):
    IDLE = "idle"
    CONNECTING = "connecting"
    CONNECTED = "connected"


@dataclass
class StaInterface:
    state: StaState = StaState.IDLE
    parent_ap_ip: IPv4Address | None = None
    sta_ip: IPv4Address | None = None

    def reset(self) -> None:
        self.state = StaState.IDLE
        self.parent_ap_ip = None
        self.sta_ip = None


@dataclass(frozen=True)
class ScanResult:
    ssid: str
    ap_ip: IPv4Address
    quality: float


@dataclass(frozen=True)
class LinkEvent:
    kind: str  # parent-connected | child-connected | parent-lost | child-left
    peer: str
    peer_ip: IPv4Address


class WifiLayer:
    def __init__(self, sim: Simulator, radio: Radio) -> None:
        self.sim = sim
        self.radio = radio
        self.ap: dict[str, ApInterface] = {}
        self.sta: dict[str, StaInterface] = {}
        self.parent: dict[str, str] = {}
        self.by_ap_ip: dict[IPv4Address, str] = {}
        self.listeners: dict[str, Callable[[LinkEvent], None]] = {}
        radio.visibility_listeners.append(self._on_visibility)

    def register(self, node: str, mac: MacAddress, profile: DeviceProfile) -> ApInterface:
        ap_ip = derive_ap_ip(mac)
        if ap_ip in self.by_ap_ip:
            raise ValueError(f"AP address {ap_ip} of {node} collides with {self.by_ap_ip[ap_ip]}")
        mac = MacAddress(mac)
        ap = ApInterface(f"{SSID_PREFIX}-{mac[4]:02X}{mac[5]:02X}", ap_ip, profile.max_children)
        self.ap[node] = ap
        self.sta[node] = StaInterface()
        self.by_ap_ip[ap_ip] = node
        self.radio.add_node(node)
        return ap

    # -- queries -------------------------------------------------------
    def resolve(self, ip: IPv4Address) -> str | None:
        node = self.by_ap_ip.get(ip)
        if node is not None:
            return node
        for child, parent in self.parent.items():
            if self.sta[child].sta_ip == ip:
                return child
        return None

    def children_of(self, node: str) -> list[str]:
        return list(self.ap[node].children)

    def descendants(self, node: str) -> set[str]:
        out: set[str] = set()
        stack = [node]
        while stack:
            for c in self.ap[stack.pop()].children:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def scan(self, node: str) -> list[ScanResult]:
        """Visible, powered APs, minus the scanner and its current subtree."""
        excluded = self.descendants(node) | {node}
        out = []
        for other in self.radio.neighbours(node):
            if other in excluded or not self.radio.up.get(other) or not self.ap[other].up:
                continue
            ap = self.ap[other]
            out.append(ScanResult(ap.ssid, ap.ap_ip, self.radio.params(node, other).quality))
        return out

    # -- association ---------------------------------------------------
    def start_ap(self, node: str) -> None:
        self.ap[node].start()

    def stop_ap(self, node: str) -> None:
        for child in list(self.ap[node].children):
            self._break(child, notify_parent=False, notify_child=True)
        self.ap[node].up = False

    def connect_sta(self, child: str, parent_ap_ip: IPv4Address) -> IPv4Address:
        parent = self.by_ap_ip.get(parent_ap_ip)
        if parent is None or parent == child:
            raise ConnectTimeout(f"no AP at {parent_ap_ip}")
        if not (self.radio.up.get(parent) and self.radio.visible(child, parent) and self.ap[parent].up):
            raise ConnectTimeout(f"AP {parent_ap_ip} not reachable from {child}")
        ap = self.ap[parent]
        if len(ap.children) >= ap.max_children:
            raise ConnectRefused(f"AP {parent_ap_ip} is full")
        if self.sta[child].state == StaState.CONNECTED:
            self._break(child, notify_parent=True, notify_child=False)
        sta = self.sta[child]
        sta.state = StaState.CONNECTING
        ip = ap.allocate()
        ap.children[child] = ip
        self.parent[child] = parent
        sta.state = StaState.CONNECTED
        sta.parent_ap_ip = parent_ap_ip
        sta.sta_ip = ip
        self.sim.trace(child, "link", op="up", parent=parent, sta_ip=ip)
        self._notify(child, LinkEvent("parent-connected", parent, parent_ap_ip))
        self._notify(parent, LinkEvent("child-connected", child, ip))
        return ip

    def disconnect_sta(self, child: str) -> None:
        if child in self.parent:
            self._break(child, notify_parent=True, notify_child=False)

    def _break(self, child: str, *, notify_parent: bool, notify_child: bool) -> None:
        parent = self.parent.pop(child, None)
        if parent is None:
            return
        sta = self.sta[child]
        sta_ip = self.ap[parent].children.pop(child)
        parent_ip = sta.parent_ap_ip
        sta.reset()
        self.sim.trace(child, "link", op="down", parent=parent, sta_ip=sta_ip)
        if notify_child:
            self._notify(child, LinkEvent("parent-lost", parent, parent_ip))
        if notify_parent:
            self._notify(parent, LinkEvent("child-left", child, sta_ip))

    def kill(self, node: str) -> None:
        """Power a node off; every link it takes part in drops in this step."""
        self.radio.up[node] = False
        if node in self.parent:
            self._break(node, notify_parent=True, notify_child=False)
        for child in list(self.ap[node].children):
            self._break(child, notify_parent=False, notify_child=True)
        self.ap[node].up = False

    def _on_visibility(self, a: str, b: str, visible: bool) -> None:
        if visible:
            return
        if self.parent.get(a) == b:
            self._break(a, notify_parent=True, notify_child=True)
        elif self.parent.get(b) == a:
            self._break(b, notify_parent=True, notify_child=True)

    def _notify(self, node: str, ev: LinkEvent) -> None:
        cb = self.listeners.get(node)
        if cb is None or not self.radio.up.get(node):
            return
        self.sim.after(0, lambda: cb(ev), target=node, kind=EventKind.LINK_CHANGE, label=ev.kind)
