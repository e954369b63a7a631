"""Binary envelope carried by every simulated frame.

Layout (big-endian, 22 byte header)::

    magic[1] version[1] category[1] type[1] src[4] dst[4] final[4] id[4] length[2] payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from ipaddress import IPv4Address

MAGIC = 0x48
VERSION = 1
HEADER = struct.Struct("!BBBB4s4s4sIH")
HEADER_SIZE = HEADER.size  # 22

ZERO_IP = IPv4Address("0.0.0.0")
BROADCAST_IP = IPv4Address("255.255.255.255")
INFINITY_WIRE = 255

TRIPLE = struct.Struct("!4sBI")


class Category(IntEnum):
    ROUTING = 1
    LIFECYCLE = 2
    MIDDLEWARE = 3
    DATA = 4
    MONITORING = 5


class RoutingType(IntEnum):
    FRU = 1
    PRU = 2


class LifecycleType(IntEnum):
    PDR = 1
    PIR = 2
    CRR = 3
    ACK = 4
    TBA = 5
    TRN = 6
    PRN = 7


class DataType(IntEnum):
    APP = 1
    ENCAPSULATED = 2
    PING = 3
    PONG = 4
    NN_REGISTER = 10
    NN_REGISTER_ACK = 11
    NN_ASSIGN = 12
    NN_ASSIGN_ACK = 13
    NN_START = 14
    NEURON_OUTPUT = 15
    NN_NACK = 16
    NN_RESULT = 17


class MonitoringType(IntEnum):
    STATE_DURATIONS = 1


class MalformedFrame(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    category: Category
    type: int
    src: IPv4Address
    dst: IPv4Address
    payload: bytes = b""
    final: IPv4Address = ZERO_IP
    id: int = 0
    version: int = VERSION

    def __post_init__(self) -> None:
        if len(self.payload) > 0xFFFF:
            raise ValueError("payload too large for a 16-bit length field")

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)

    @property
    def final_destination(self) -> IPv4Address:
        return self.dst if self.final == ZERO_IP else self.final

    def encode(self) -> bytes:
        head = HEADER.pack(MAGIC, self.version, int(self.category), int(self.type),
                           self.src.packed, self.dst.packed, self.final.packed,
                           self.id & 0xFFFFFFFF, len(self.payload))
        return head + self.payload


def decode(frame: bytes) -> Envelope:
    if len(frame) < HEADER_SIZE:
        raise MalformedFrame(f"truncated header ({len(frame)} bytes)")
    magic, version, cat, typ, src, dst, final, ident, length = HEADER.unpack_from(frame)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic 0x{magic:02x}")
    if version != VERSION:
        raise MalformedFrame(f"unsupported version {version}")
    try:
        category = Category(cat)
    except ValueError as exc:
        raise MalformedFrame(f"unknown category {cat}") from exc
    if len(frame) != HEADER_SIZE + length:
        raise MalformedFrame(f"length field {length} does not match frame size {len(frame)}")
    return Envelope(category, typ, IPv4Address(src), IPv4Address(dst),
                    bytes(frame[HEADER_SIZE:]), IPv4Address(final), ident, version)


# -- routing triples ---------------------------------------------------

def encode_triples(triples: list[tuple[IPv4Address, int, int]]) -> bytes:
    return b"".join(TRIPLE.pack(d.packed, min(h, INFINITY_WIRE), s) for d, h, s in triples)


def decode_triples(payload: bytes) -> list[tuple[IPv4Address, int, int]]:
    if len(payload) % TRIPLE.size:
        raise MalformedFrame("routing payload is not a whole number of triples")
    return [(IPv4Address(d), h, s) for d, h, s in TRIPLE.iter_unpack(payload)]


def pack_ips(ips) -> bytes:
    ips = list(ips)
    return bytes([len(ips)]) + b"".join(ip.packed for ip in ips)


def unpack_ips(buf: bytes, offset: int = 0) -> tuple[list[IPv4Address], int]:
    n = buf[offset]
    offset += 1
    out = [IPv4Address(buf[offset + 4 * i: offset + 4 * i + 4]) for i in range(n)]
    return out, offset + 4 * n
