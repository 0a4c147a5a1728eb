"""Overlay wire framing.

Every datagram starts with a fixed 15-byte header::

    magic(1)=0xE6 | version(1)=0x01 | type(1) | sender overlay IPv4(4) | counter(8, BE)

followed by the payload. DATA payloads are AES-256-GCM ciphertext with the
16-byte tag appended; every other type carries a plaintext body.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass

from ..errors import EdgeFaasError

MAGIC = 0xE6
VERSION = 0x01
HEADER = struct.Struct(">BBB4sQ")
HEADER_LEN = HEADER.size
MAX_PAYLOAD = 65000

assert HEADER_LEN == 15


class PacketType(enum.IntEnum):
    HANDSHAKE_INIT = 1
    HANDSHAKE_RESP = 2
    DATA = 3
    KEEPALIVE = 4
    LH_QUERY = 5
    LH_REPLY = 6
    LH_REGISTER = 7


class PacketError(EdgeFaasError):
    pass


class PayloadTooLarge(PacketError):
    pass


class BadMagic(PacketError):
    pass


class BadVersion(PacketError):
    pass


class UnknownType(PacketError):
    pass


class Truncated(PacketError):
    pass


@dataclass(frozen=True)
class OverlayPacket:
    ptype: PacketType
    sender_ip: ipaddress.IPv4Address
    counter: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "ptype", PacketType(self.ptype))
        object.__setattr__(self, "sender_ip", ipaddress.IPv4Address(self.sender_ip))
        if not 0 <= self.counter < 2**64:
            raise ValueError("counter must fit in 64 unsigned bits")

    def header(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, int(self.ptype), self.sender_ip.packed, self.counter)


def encode_packet(p: OverlayPacket) -> bytes:
    if len(p.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(p.payload)} bytes exceeds {MAX_PAYLOAD}")
    return p.header() + bytes(p.payload)


def decode_packet(data: bytes) -> OverlayPacket:
    if len(data) < HEADER_LEN:
        raise Truncated(f"frame of {len(data)} bytes is shorter than the header")
    magic, version, ptype, ip, counter = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic 0x{magic:02X}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    try:
        kind = PacketType(ptype)
    except ValueError:
        raise UnknownType(f"unknown packet type {ptype}") from None
    payload = bytes(data[HEADER_LEN:])
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return OverlayPacket(kind, ipaddress.IPv4Address(ip), counter, payload)


Endpoint = tuple[str, int]
_ENDPOINT = struct.Struct(">4sH")


def pack_endpoints(endpoints: list[Endpoint]) -> bytes:
    if len(endpoints) > 255:
        raise ValueError("at most 255 endpoints")
    out = bytearray([len(endpoints)])
    for host, port in endpoints:
        out += _ENDPOINT.pack(ipaddress.IPv4Address(host).packed, port)
    return bytes(out)


def unpack_endpoints(data: bytes, offset: int = 0) -> tuple[list[Endpoint], int]:
    """Parse a count-prefixed endpoint list; returns (endpoints, next offset)."""
    if len(data) <= offset:
        raise Truncated("missing endpoint count")
    count = data[offset]
    offset += 1
    end = offset + count * _ENDPOINT.size
    if len(data) < end:
        raise Truncated("endpoint list truncated")
    endpoints = []
    for i in range(count):
        raw, port = _ENDPOINT.unpack_from(data, offset + i * _ENDPOINT.size)
        endpoints.append((str(ipaddress.IPv4Address(raw)), port))
    return endpoints, end
