"""Datagram transports for overlay nodes: real UDP sockets or an in-process fabric."""

from __future__ import annotations

import logging
import socket
import threading
from collections import Counter
from typing import Callable

from .packet import Endpoint, PacketError, decode_packet

log = logging.getLogger(__name__)

Handler = Callable[[bytes, Endpoint], None]


class MemoryFabric:
    """Synchronous in-process datagram delivery between endpoints.

    Every frame is recorded in ``captured`` as (src, dst, frame), which
    lets tests observe exactly what crossed the wire.
    """

    def __init__(self) -> None:
        self._handlers: dict[Endpoint, Handler] = {}
        self.captured: list[tuple[Endpoint, Endpoint, bytes]] = []
        self.blocked: set[Endpoint] = set()
        self._next_port = 40000
        self._lock = threading.Lock()

    def attach(self, host: str = "127.0.0.1", port: int | None = None) -> "MemoryTransport":
        with self._lock:
            if port is None:
                port = self._next_port
                self._next_port += 1
        return MemoryTransport(self, (host, port))

    def _bind(self, addr: Endpoint, handler: Handler) -> None:
        with self._lock:
            self._handlers[addr] = handler

    def deliver(self, src: Endpoint, dst: Endpoint, frame: bytes) -> None:
        self.captured.append((src, dst, frame))
        if dst in self.blocked or src in self.blocked:
            return
        handler = self._handlers.get(dst)
        if handler is not None:
            handler(frame, src)

    def frames_to(self, dst: Endpoint) -> Counter:
        """Count frames by packet type that were addressed to ``dst``."""
        counts: Counter = Counter()
        for _, d, frame in self.captured:
            if d == dst:
                try:
                    counts[decode_packet(frame).ptype] += 1
                except PacketError:
                    counts["invalid"] += 1
        return counts


class MemoryTransport:
    def __init__(self, fabric: MemoryFabric, address: Endpoint) -> None:
        self.fabric = fabric
        self.address = address

    def listen(self, handler: Handler) -> None:
        self.fabric._bind(self.address, handler)

    def sendto(self, frame: bytes, addr: Endpoint) -> None:
        self.fabric.deliver(self.address, tuple(addr), frame)

    def close(self) -> None:
        pass


class UdpTransport:
    """A bound UDP socket with a background receive thread."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0) -> None:
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.2)
        self.address: Endpoint = self.sock.getsockname()
        self._thread: threading.Thread | None = None
        self._closed = threading.Event()

    def listen(self, handler: Handler) -> None:
        def loop() -> None:
            while not self._closed.is_set():
                try:
                    frame, addr = self.sock.recvfrom(65535)
                except socket.timeout:
                    continue
                except OSError:
                    break
                try:
                    handler(frame, addr)
                except Exception:
                    log.exception("handler failed for datagram from %s", addr)

        self._thread = threading.Thread(target=loop, name=f"udp-{self.address[1]}", daemon=True)
        self._thread.start()

    def sendto(self, frame: bytes, addr: Endpoint) -> None:
        self.sock.sendto(frame, tuple(addr))

    def close(self) -> None:
        self._closed.set()
        self.sock.close()
        if self._thread is not None:
            self._thread.join(timeout=1)
