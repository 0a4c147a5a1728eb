"""Lighthouse: the beacon that maps overlay IPs to underlay endpoints.

Nodes announce themselves with LH_REGISTER and locate peers with LH_QUERY.
The lighthouse never relays traffic; once two nodes know each other's
endpoints they punch through directly.

Registration body::

    u16 cert_len | certificate | endpoint list | Ed25519 signature

where the signature is made with the node's certificate key over the
packet header and everything before it. The lighthouse answers a
registration with an LH_REPLY for the node's own address, which doubles as
an acknowledgement and reveals the node's observed (post-NAT) endpoint.
"""

from __future__ import annotations

import argparse
import ipaddress
import logging
import struct
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..clock import WallClock
from .cert import Certificate, MalformedCertificate, load_certificate, verify_certificate, verify_signature
from .packet import (
    Endpoint,
    OverlayPacket,
    PacketError,
    PacketType,
    decode_packet,
    encode_packet,
    pack_endpoints,
    unpack_endpoints,
)

log = logging.getLogger(__name__)

REGISTRATION_INTERVAL_MS = 15_000
RECORD_TTL_FACTOR = 3
LIGHTHOUSE_IP = ipaddress.IPv4Address("10.42.0.1")


@dataclass
class LighthouseRecord:
    overlay_ip: ipaddress.IPv4Address
    endpoints: list[Endpoint] = field(default_factory=list)
    last_seen: float = 0.0


def build_register(cert: Certificate, endpoints: list[Endpoint], counter: int, signer) -> bytes:
    """Frame an LH_REGISTER; ``signer`` signs bytes with the node key."""
    body = struct.pack(">H", len(cert.to_bytes())) + cert.to_bytes() + pack_endpoints(endpoints)
    header = OverlayPacket(PacketType.LH_REGISTER, cert.overlay_ip, counter).header()
    return encode_packet(
        OverlayPacket(PacketType.LH_REGISTER, cert.overlay_ip, counter, body + signer(header + body))
    )


def parse_reply(payload: bytes) -> tuple[ipaddress.IPv4Address, list[Endpoint]]:
    if len(payload) < 4:
        raise PacketError("LH_REPLY too short")
    endpoints, _ = unpack_endpoints(payload, 4)
    return ipaddress.IPv4Address(payload[:4]), endpoints


class Lighthouse:
    """Sans-IO lighthouse state machine.

    :meth:`handle` takes one datagram and returns the datagrams to send
    back, so the same logic runs over UDP or the in-memory fabric.
    """

    def __init__(
        self,
        ca_public: bytes,
        overlay_ip=LIGHTHOUSE_IP,
        clock=None,
        registration_interval: float = REGISTRATION_INTERVAL_MS,
    ) -> None:
        self.ca_public = ca_public
        self.overlay_ip = ipaddress.IPv4Address(overlay_ip)
        self.clock = clock or WallClock()
        self.ttl = RECORD_TTL_FACTOR * registration_interval
        self.records: dict[ipaddress.IPv4Address, LighthouseRecord] = {}
        self.received: Counter = Counter()
        self.queries_from: Counter = Counter()
        self._counter = 0
        self._lock = threading.Lock()

    def _reply(self, target: ipaddress.IPv4Address, endpoints: list[Endpoint]) -> bytes:
        with self._lock:
            self._counter += 1
            counter = self._counter
        return encode_packet(
            OverlayPacket(PacketType.LH_REPLY, self.overlay_ip, counter, target.packed + pack_endpoints(endpoints))
        )

    def lookup(self, overlay_ip) -> list[Endpoint]:
        ip = ipaddress.IPv4Address(overlay_ip)
        with self._lock:
            rec = self.records.get(ip)
            if rec is None:
                return []
            if self.clock.now() - rec.last_seen > self.ttl:
                del self.records[ip]
                return []
            return list(rec.endpoints)

    def handle(self, frame: bytes, addr: Endpoint) -> list[tuple[bytes, Endpoint]]:
        try:
            pkt = decode_packet(frame)
        except PacketError:
            self.received["invalid"] += 1
            return []
        self.received[pkt.ptype] += 1
        if pkt.ptype is PacketType.LH_REGISTER:
            return self._register(pkt, frame, tuple(addr))
        if pkt.ptype is PacketType.LH_QUERY:
            self.queries_from[pkt.sender_ip] += 1
            if len(pkt.payload) != 4:
                return []
            target = ipaddress.IPv4Address(pkt.payload)
            return [(self._reply(target, self.lookup(target)), tuple(addr))]
        return []

    def _register(self, pkt: OverlayPacket, frame: bytes, addr: Endpoint) -> list[tuple[bytes, Endpoint]]:
        body = pkt.payload
        try:
            (cert_len,) = struct.unpack_from(">H", body)
            cert = Certificate.from_bytes(body[2 : 2 + cert_len])
            endpoints, end = unpack_endpoints(body, 2 + cert_len)
        except (struct.error, MalformedCertificate, PacketError):
            self.received["rejected"] += 1
            return []
        signature = body[end:]
        signed = frame[: len(frame) - len(signature)]
        if (
            cert.overlay_ip != pkt.sender_ip
            or not verify_certificate(cert, self.ca_public)
            or not verify_signature(cert.public_key, signature, signed)
        ):
            self.received["rejected"] += 1
            return []
        observed = [addr] + [ep for ep in endpoints if ep != addr]
        with self._lock:
            self.records[cert.overlay_ip] = LighthouseRecord(cert.overlay_ip, observed, self.clock.now())
        log.debug("registered %s at %s", cert.overlay_ip, observed)
        return [(self._reply(cert.overlay_ip, observed), addr)]


def serve(lighthouse: Lighthouse, transport, workers: int = 4) -> ThreadPoolExecutor:
    """Answer datagrams arriving on ``transport`` from a worker pool."""
    pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="lighthouse")

    def work(frame: bytes, addr: Endpoint) -> None:
        for out, dst in lighthouse.handle(frame, addr):
            transport.sendto(out, dst)

    transport.listen(lambda frame, addr: pool.submit(work, frame, addr))
    return pool


def _parse_listen(value: str) -> Endpoint:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError("expected <ip:port>")
    return host, int(port)


def main(argv=None) -> int:
    from .transport import UdpTransport

    parser = argparse.ArgumentParser(prog="lighthouse", description="Run an overlay lighthouse.")
    parser.add_argument("--listen", type=_parse_listen, required=True, help="ip:port to bind")
    parser.add_argument("--ca", required=True, help="CA certificate file")
    parser.add_argument("--overlay-ip", default=str(LIGHTHOUSE_IP))
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    ca_cert = load_certificate(args.ca)
    lh = Lighthouse(ca_cert.public_key, overlay_ip=args.overlay_ip)
    transport = UdpTransport(*args.listen)
    pool = serve(lh, transport)
    log.info("lighthouse %s listening on %s:%d", lh.overlay_ip, *transport.address)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        transport.close()
        pool.shutdown()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
