"""Node lifecycle: an 8-state machine fed by a fixed-size event ring."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address
from typing import Generic, Iterator, TypeVar


class State(str, Enum):
    INIT = "Init"
    SEARCH = "Search"
    JOIN_NETWORK = "JoinNetwork"
    ACTIVE = "Active"
    EXECUTE_JOB = "ExecuteJob"
    PARENT_RECOVERY = "ParentRecovery"
    RECOVERY_AWAIT = "RecoveryAwait"
    NODE_RESTART = "NodeRestart"


INTEGRATION_STATES = (State.INIT, State.SEARCH, State.JOIN_NETWORK)
OPERATIONAL = frozenset({State.ACTIVE, State.EXECUTE_JOB})


class Ev(str, Enum):
    START = "start"
    CANDIDATES_FOUND = "candidates-found"
    NO_CANDIDATES = "no-candidates"
    JOINED = "joined"
    JOIN_FAILED = "join-failed"
    JOB_STARTED = "job-started"
    JOB_FINISHED = "job-finished"
    PARENT_LOST = "parent-lost"
    RECOVERED = "recovered"
    RECOVERY_FAILED = "recovery-failed"
    RESTART_DONE = "restart-done"
    TBA = "tba"
    TRN = "trn"
    PRN = "prn"
    ROOT_UNREACHABLE = "root-unreachable"
    ROOT_REACHABLE = "root-reachable"


class Action(str, Enum):
    BECOME_ROOT = "become-root"
    SCAN = "scan"
    JOIN = "join"
    ANNOUNCE = "announce"
    SEND_TBA = "send-tba"
    SEND_TRN = "send-trn"
    RECOVER = "recover"
    RESTART = "restart"
    ABORT_JOIN = "abort-join"


def transition(state: State, event: Ev, is_root: bool) -> tuple[State, list[Action]] | None:
    """Pure transition function. ``None`` means the event is invalid here."""
    S, A = State, Action
    if is_root:
        table = {
            (S.INIT, Ev.START): (S.ACTIVE, [A.BECOME_ROOT]),
            (S.ACTIVE, Ev.JOB_STARTED): (S.EXECUTE_JOB, []),
            (S.EXECUTE_JOB, Ev.JOB_FINISHED): (S.ACTIVE, []),
        }
        return table.get((state, event))
    if state in OPERATIONAL:
        if event == Ev.PARENT_LOST:
            return S.PARENT_RECOVERY, [A.SEND_TBA, A.RECOVER]
        if event in (Ev.TBA, Ev.ROOT_UNREACHABLE):
            return S.RECOVERY_AWAIT, [A.SEND_TBA]
    table = {
        (S.INIT, Ev.START): (S.SEARCH, [A.SCAN]),
        (S.SEARCH, Ev.CANDIDATES_FOUND): (S.JOIN_NETWORK, [A.JOIN]),
        (S.SEARCH, Ev.NO_CANDIDATES): (S.SEARCH, [A.SCAN]),
        (S.JOIN_NETWORK, Ev.JOINED): (S.ACTIVE, [A.ANNOUNCE]),
        (S.JOIN_NETWORK, Ev.JOIN_FAILED): (S.SEARCH, [A.SCAN]),
        (S.JOIN_NETWORK, Ev.PARENT_LOST): (S.SEARCH, [A.ABORT_JOIN, A.SCAN]),
        (S.ACTIVE, Ev.JOB_STARTED): (S.EXECUTE_JOB, []),
        (S.EXECUTE_JOB, Ev.JOB_FINISHED): (S.ACTIVE, []),
        (S.PARENT_RECOVERY, Ev.RECOVERED): (S.ACTIVE, [A.SEND_TRN]),
        (S.PARENT_RECOVERY, Ev.RECOVERY_FAILED): (S.NODE_RESTART, [A.RESTART]),
        (S.NODE_RESTART, Ev.RESTART_DONE): (S.SEARCH, [A.SCAN]),
        (S.RECOVERY_AWAIT, Ev.TRN): (S.ACTIVE, [A.SEND_TRN]),
        (S.RECOVERY_AWAIT, Ev.ROOT_REACHABLE): (S.ACTIVE, [A.SEND_TRN]),
        (S.RECOVERY_AWAIT, Ev.PRN): (S.PARENT_RECOVERY, [A.RECOVER]),
        (S.RECOVERY_AWAIT, Ev.PARENT_LOST): (S.PARENT_RECOVERY, [A.RECOVER]),
    }
    return table.get((state, event))


T = TypeVar("T")


class EventBuffer(Generic[T]):
    """Fixed-capacity FIFO ring; a push onto a full ring overwrites the oldest item."""

    def __init__(self, capacity: int = 32) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[T | None] = [None] * capacity
        self.head = 0  # next item to pop
        self.size = 0
        self.overwritten = 0

    def push(self, item: T) -> None:
        tail = (self.head + self.size) % self.capacity
        self._items[tail] = item
        if self.size == self.capacity:
            self.head = (self.head + 1) % self.capacity
            self.overwritten += 1
        else:
            self.size += 1

    def pop(self) -> T:
        if not self.size:
            raise IndexError("pop from empty event buffer")
        item = self._items[self.head]
        self._items[self.head] = None
        self.head = (self.head + 1) % self.capacity
        self.size -= 1
        return item  # type: ignore[return-value]

    def drain(self) -> Iterator[T]:
        while self.size:
            yield self.pop()

    def __len__(self) -> int:
        return self.size


# -- join handshake payloads ----------------------------------------------

_PIR = struct.Struct("!BBBB")
_ACK = struct.Struct("!B4sB")
_STATE_CODES = {s: i for i, s in enumerate(State)}


@dataclass(frozen=True)
class ParentInfo:
    """Status a candidate parent returns in a PIR."""
    ap_ip: IPv4Address
    hops_to_root: int
    child_count: int
    state: State
    accepting: bool
    quality: float = 1.0

    def encode(self) -> bytes:
        return _PIR.pack(min(self.hops_to_root, 255), self.child_count, _STATE_CODES[self.state], int(self.accepting))

    @classmethod
    def decode(cls, ap_ip: IPv4Address, payload: bytes, quality: float = 1.0) -> "ParentInfo":
        hops, children, state, accepting = _PIR.unpack(payload[:_PIR.size])
        return cls(ap_ip, hops, children, list(State)[state], bool(accepting), quality)


def rank_key(info: ParentInfo) -> tuple:
    """Default preference: fewest hops to root, fewest children, best link, lowest address."""
    return (info.hops_to_root, info.child_count, -info.quality, int(info.ap_ip))


def rank_candidates(infos: list[ParentInfo]) -> list[ParentInfo]:
    return sorted((i for i in infos if i.accepting), key=rank_key)


def encode_ack(accepted: bool, root_ip: IPv4Address, hops_to_root: int) -> bytes:
    return _ACK.pack(int(accepted), root_ip.packed, min(hops_to_root, 255))


def decode_ack(payload: bytes) -> tuple[bool, IPv4Address, int]:
    ok, root, hops = _ACK.unpack(payload[:_ACK.size])
    return bool(ok), IPv4Address(root), hops
