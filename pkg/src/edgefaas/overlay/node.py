"""Overlay node: registration, hole punching, handshake and data delivery.

Handshake bodies (HANDSHAKE_INIT and HANDSHAKE_RESP)::

    u16 cert_len | certificate | ephemeral X25519 public (32) | Ed25519 signature (64)

The initiator signs ``b"init" | its ephemeral | responder overlay IP``;
the responder signs ``b"resp" | its ephemeral | initiator ephemeral |
initiator overlay IP``. The signatures prove possession of the
certificate key and bind the ephemerals to the session.
"""

from __future__ import annotations

import ipaddress
import logging
import os
import queue
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from ..clock import WallClock
from ..errors import EdgeFaasError
from .cert import Certificate, MalformedCertificate, NodeIdentity, verify_certificate, verify_signature
from .latency import LinkEmulator
from .lighthouse import build_register, parse_reply
from .packet import Endpoint, OverlayPacket, PacketError, PacketType, decode_packet, encode_packet
from .tunnel import (
    AuthFail,
    Replay,
    Tunnel,
    TunnelDead,
    TunnelState,
    derive_tunnel_keys,
    x25519_shared,
)

log = logging.getLogger(__name__)

PUNCH_PROBES = 5
PROBE_SPACING_MS = 200
PUNCH_TIMEOUT_MS = 2000
EPHEMERAL_LEN = 32
SIG_LEN = 64


class HandshakeError(EdgeFaasError):
    pass


class CertInvalid(HandshakeError):
    pass


class PunchTimeout(HandshakeError):
    pass


class PeerUnknown(HandshakeError):
    pass


def _ephemeral_public(private: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(private).public_key().public_bytes_raw()


def pack_handshake(cert: Certificate, ephemeral: bytes, signature: bytes) -> bytes:
    raw = cert.to_bytes()
    return struct.pack(">H", len(raw)) + raw + ephemeral + signature


def unpack_handshake(body: bytes) -> tuple[Certificate, bytes, bytes]:
    try:
        (n,) = struct.unpack_from(">H", body)
    except struct.error:
        raise MalformedCertificate("handshake body too short") from None
    cert = Certificate.from_bytes(body[2 : 2 + n])
    rest = body[2 + n :]
    if len(rest) != EPHEMERAL_LEN + SIG_LEN:
        raise MalformedCertificate("handshake body has the wrong length")
    return cert, rest[:EPHEMERAL_LEN], rest[EPHEMERAL_LEN:]


@dataclass
class _Pending:
    ephemeral_private: bytes
    done: threading.Event = field(default_factory=threading.Event)
    tunnel: Tunnel | None = None
    error: Exception | None = None


class OverlayNode:
    """One mesh member bound to a datagram transport.

    ``link_for`` maps a peer overlay IP to the :class:`LinkEmulator` whose
    delay is applied to DATA arriving from that peer (``None`` disables
    emulation for the peer).
    """

    def __init__(
        self,
        identity: NodeIdentity,
        ca_public: bytes,
        transport,
        *,
        clock=None,
        link_for: Callable[[ipaddress.IPv4Address], LinkEmulator | None] | None = None,
        probes: int = PUNCH_PROBES,
        probe_spacing_ms: float = PROBE_SPACING_MS,
        punch_timeout_ms: float = PUNCH_TIMEOUT_MS,
        ephemeral_factory: Callable[[], bytes] | None = None,
    ) -> None:
        self.identity = identity
        self.ca_public = ca_public
        self.transport = transport
        self.clock = clock or WallClock()
        self.link_for = link_for or (lambda ip: None)
        self.probes = probes
        self.probe_spacing_ms = probe_spacing_ms
        self.punch_timeout_ms = punch_timeout_ms
        self.ephemeral_factory = ephemeral_factory or (lambda: os.urandom(32))
        self.tunnels: dict[ipaddress.IPv4Address, Tunnel] = {}
        self.peer_endpoints: dict[ipaddress.IPv4Address, Endpoint] = {}
        self.inbox: queue.Queue = queue.Queue()
        self.on_data: Callable[[ipaddress.IPv4Address, bytes], None] | None = None
        self.stats: Counter = Counter()
        self._counter = 0
        self._lock = threading.RLock()
        self._pending: dict[ipaddress.IPv4Address, _Pending] = {}
        self._responded: dict[tuple[ipaddress.IPv4Address, bytes], bytes] = {}
        self._replies: dict[ipaddress.IPv4Address, tuple[threading.Event, list]] = {}
        transport.listen(self.datagram_received)

    @property
    def overlay_ip(self) -> ipaddress.IPv4Address:
        return self.identity.overlay_ip

    def _control_packet(self, ptype: PacketType, payload: bytes = b"") -> bytes:
        with self._lock:
            self._counter += 1
            counter = self._counter
        return encode_packet(OverlayPacket(ptype, self.overlay_ip, counter, payload))

    def _expect_reply(self, target: ipaddress.IPv4Address) -> threading.Event:
        event = threading.Event()
        with self._lock:
            self._replies[target] = (event, [])
        return event

    def _take_reply(self, target: ipaddress.IPv4Address) -> list[Endpoint] | None:
        with self._lock:
            _, box = self._replies.pop(target, (None, []))
        return box[0] if box else None

    # -- lighthouse -----------------------------------------------------

    def register(self, lighthouse: Endpoint, timeout_ms: float | None = None) -> list[Endpoint]:
        """Announce this node; returns the endpoints the lighthouse recorded."""
        event = self._expect_reply(self.overlay_ip)
        with self._lock:
            self._counter += 1
            counter = self._counter
        endpoints = list(self.identity.underlay_endpoints) or [tuple(self.transport.address)]
        frame = build_register(self.identity.certificate, endpoints, counter, self.identity.sign)
        self.transport.sendto(frame, lighthouse)
        event.wait((timeout_ms or self.punch_timeout_ms) / 1000)
        recorded = self._take_reply(self.overlay_ip)
        if recorded is None:
            raise PunchTimeout(f"lighthouse {lighthouse} did not acknowledge registration")
        return recorded

    def query(self, target, lighthouse: Endpoint) -> list[Endpoint]:
        target = ipaddress.IPv4Address(target)
        event = self._expect_reply(target)
        self.transport.sendto(self._control_packet(PacketType.LH_QUERY, target.packed), lighthouse)
        event.wait(self.punch_timeout_ms / 1000)
        endpoints = self._take_reply(target)
        if endpoints is None:
            raise PunchTimeout(f"lighthouse {lighthouse} did not answer")
        if not endpoints:
            raise PeerUnknown(f"lighthouse has no record of {target}")
        return endpoints

    # -- handshake ------------------------------------------------------

    def establish_tunnel(self, target, lighthouse: Endpoint) -> Tunnel:
        target = ipaddress.IPv4Address(target)
        with self._lock:
            existing = self.tunnels.get(target)
            if existing is not None and existing.state is TunnelState.ESTABLISHED:
                return existing
        endpoints = self.query(target, lighthouse)

        private = self.ephemeral_factory()
        ephemeral = _ephemeral_public(private)
        pending = _Pending(private)
        with self._lock:
            self._pending[target] = pending
        signature = self.identity.sign(b"init" + ephemeral + target.packed)
        body = pack_handshake(self.identity.certificate, ephemeral, signature)

        deadline = time.monotonic() + self.punch_timeout_ms / 1000
        try:
            for _ in range(self.probes):
                frame = self._control_packet(PacketType.HANDSHAKE_INIT, body)
                for ep in endpoints:
                    self.transport.sendto(frame, ep)
                if pending.done.wait(self.probe_spacing_ms / 1000):
                    break
            pending.done.wait(max(0.0, deadline - time.monotonic()))
        finally:
            with self._lock:
                self._pending.pop(target, None)
        if pending.error is not None:
            raise pending.error
        if pending.tunnel is None:
            raise PunchTimeout(f"no handshake response from {target}")
        return pending.tunnel

    def _make_tunnel(self, peer_ip, shared: bytes, endpoint: Endpoint) -> Tunnel:
        send_key, recv_key = derive_tunnel_keys(shared, self.overlay_ip, peer_ip)
        tunnel = Tunnel(
            self.overlay_ip,
            peer_ip,
            send_key,
            recv_key,
            clock=self.clock,
            emulator=self.link_for(ipaddress.IPv4Address(peer_ip)),
            transmit=lambda frame, ep=endpoint: self.transport.sendto(frame, ep),
        )
        with self._lock:
            self.tunnels[tunnel.peer_overlay_ip] = tunnel
            self.peer_endpoints[tunnel.peer_overlay_ip] = endpoint
        return tunnel

    def _on_init(self, pkt: OverlayPacket, addr: Endpoint) -> None:
        try:
            cert, ephemeral, signature = unpack_handshake(pkt.payload)
        except MalformedCertificate:
            self.stats["handshake_rejected"] += 1
            return
        key = (pkt.sender_ip, ephemeral)
        with self._lock:
            cached = self._responded.get(key)
        if cached is not None:
            self.transport.sendto(cached, addr)
            return
        if (
            cert.overlay_ip != pkt.sender_ip
            or not verify_certificate(cert, self.ca_public)
            or not verify_signature(cert.public_key, signature, b"init" + ephemeral + self.overlay_ip.packed)
        ):
            self.stats["handshake_rejected"] += 1
            log.info("rejected handshake from %s at %s", pkt.sender_ip, addr)
            return
        private = self.ephemeral_factory()
        mine = _ephemeral_public(private)
        self._make_tunnel(pkt.sender_ip, x25519_shared(private, ephemeral), addr)
        signature = self.identity.sign(b"resp" + mine + ephemeral + pkt.sender_ip.packed)
        frame = self._control_packet(
            PacketType.HANDSHAKE_RESP, pack_handshake(self.identity.certificate, mine, signature)
        )
        with self._lock:
            self._responded[key] = frame
        self.transport.sendto(frame, addr)

    def _on_resp(self, pkt: OverlayPacket, addr: Endpoint) -> None:
        with self._lock:
            pending = self._pending.get(pkt.sender_ip)
        if pending is None or pending.done.is_set():
            return
        own = _ephemeral_public(pending.ephemeral_private)
        try:
            cert, ephemeral, signature = unpack_handshake(pkt.payload)
            valid = (
                cert.overlay_ip == pkt.sender_ip
                and verify_certificate(cert, self.ca_public)
                and verify_signature(cert.public_key, signature, b"resp" + ephemeral + own + self.overlay_ip.packed)
            )
        except MalformedCertificate:
            valid = False
        if not valid:
            self.stats["handshake_rejected"] += 1
            pending.error = CertInvalid(f"peer {pkt.sender_ip} presented an invalid certificate")
            pending.done.set()
            return
        pending.tunnel = self._make_tunnel(
            pkt.sender_ip, x25519_shared(pending.ephemeral_private, ephemeral), addr
        )
        pending.done.set()

    # -- traffic --------------------------------------------------------

    def send(self, target, payload: bytes) -> None:
        target = ipaddress.IPv4Address(target)
        with self._lock:
            tunnel = self.tunnels.get(target)
        if tunnel is None:
            raise TunnelDead(f"no tunnel to {target}")
        tunnel.send(payload)

    def datagram_received(self, frame: bytes, addr: Endpoint) -> None:
        try:
            pkt = decode_packet(frame)
        except PacketError:
            self.stats["invalid"] += 1
            return
        self.stats[pkt.ptype] += 1
        if pkt.ptype is PacketType.DATA:
            with self._lock:
                tunnel = self.tunnels.get(pkt.sender_ip)
            if tunnel is None:
                self.stats["no_tunnel"] += 1
                return
            try:
                payload = tunnel.recv(frame)
            except (AuthFail, Replay, TunnelDead) as exc:
                self.stats[type(exc).__name__] += 1
                return
            if self.on_data is not None:
                self.on_data(pkt.sender_ip, payload)
            else:
                self.inbox.put((pkt.sender_ip, payload))
        elif pkt.ptype is PacketType.KEEPALIVE:
            with self._lock:
                tunnel = self.tunnels.get(pkt.sender_ip)
            if tunnel is not None:
                tunnel.note_keepalive(pkt)
        elif pkt.ptype is PacketType.HANDSHAKE_INIT:
            self._on_init(pkt, addr)
        elif pkt.ptype is PacketType.HANDSHAKE_RESP:
            self._on_resp(pkt, addr)
        elif pkt.ptype is PacketType.LH_REPLY:
            try:
                target, endpoints = parse_reply(pkt.payload)
            except PacketError:
                return
            with self._lock:
                slot = self._replies.get(target)
                if slot is not None and not slot[1]:
                    slot[1].append(endpoints)
                    slot[0].set()

    def tick(self, now: float | None = None) -> None:
        """Send due keep-alives and drop tunnels whose peer went silent."""
        now = self.clock.now() if now is None else now
        with self._lock:
            tunnels = list(self.tunnels.items())
        for peer, tunnel in tunnels:
            pkt = tunnel.keepalive_tick(now)
            if pkt is not None:
                self.transport.sendto(encode_packet(pkt), self.peer_endpoints[peer])
            elif tunnel.state is TunnelState.DEAD:
                with self._lock:
                    self.tunnels.pop(peer, None)
