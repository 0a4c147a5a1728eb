"""Encrypted point-to-point sessions and their key schedule."""

from __future__ import annotations

import enum
import ipaddress
import threading
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..clock import WallClock
from ..errors import EdgeFaasError
from .latency import LinkEmulator
from .packet import HEADER_LEN, OverlayPacket, PacketError, PacketType, decode_packet, encode_packet

KEEPALIVE_INTERVAL_MS = 10_000
MISSED_KEEPALIVES = 3
REPLAY_WINDOW = 64
TAG_LEN = 16
KDF_INFO = b"edgefaas-overlay/1"


class TunnelError(EdgeFaasError):
    pass


class AuthFail(TunnelError):
    pass


class Replay(TunnelError):
    pass


class TunnelDead(TunnelError):
    pass


class TunnelState(enum.Enum):
    NEGOTIATING = "negotiating"
    ESTABLISHED = "established"
    DEAD = "dead"


def x25519_shared(private: bytes, peer_public: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(private).exchange(
        X25519PublicKey.from_public_bytes(peer_public)
    )


def derive_tunnel_keys(shared: bytes, local_ip, peer_ip) -> tuple[bytes, bytes]:
    """Return (send_key, recv_key) for the local side.

    HKDF-SHA256 expands the shared secret into 64 bytes; the first half
    protects traffic from the lower overlay IP to the higher one.
    """
    local_ip = ipaddress.IPv4Address(local_ip)
    peer_ip = ipaddress.IPv4Address(peer_ip)
    if local_ip == peer_ip:
        raise ValueError("tunnel endpoints must differ")
    low, high = sorted((local_ip, peer_ip))
    okm = HKDF(
        algorithm=hashes.SHA256(), length=64, salt=None, info=KDF_INFO + low.packed + high.packed
    ).derive(shared)
    low_to_high, high_to_low = okm[:32], okm[32:]
    if local_ip == low:
        return low_to_high, high_to_low
    return high_to_low, low_to_high


def nonce_for(sender_ip, counter: int) -> bytes:
    return ipaddress.IPv4Address(sender_ip).packed + counter.to_bytes(8, "big")


class Tunnel:
    """One established overlay session with a peer.

    ``send_counter`` advances under a lock, so a tunnel may be shared
    between threads. The emulated link delay is applied in :meth:`recv`
    after the replay window has been updated and the lock released.
    """

    def __init__(
        self,
        local_ip,
        peer_overlay_ip,
        send_key: bytes,
        recv_key: bytes,
        *,
        clock=None,
        emulator: LinkEmulator | None = None,
        transmit: Callable[[bytes], None] | None = None,
        keepalive_interval: float = KEEPALIVE_INTERVAL_MS,
    ) -> None:
        if len(send_key) != 32 or len(recv_key) != 32:
            raise ValueError("tunnel keys must be 32 bytes")
        if send_key == recv_key:
            raise ValueError("send and receive keys must differ")
        self.local_ip = ipaddress.IPv4Address(local_ip)
        self.peer_overlay_ip = ipaddress.IPv4Address(peer_overlay_ip)
        self.send_key = send_key
        self.recv_key = recv_key
        self.clock = clock or WallClock()
        self.emulator = emulator
        self.transmit = transmit
        self.keepalive_interval = keepalive_interval
        self.send_counter = 0
        self.highest_recv_counter = 0
        self.replay_window = 0
        self.state = TunnelState.ESTABLISHED
        now = self.clock.now()
        self.last_activity = now
        self.last_recv = now
        self._seal = AESGCM(send_key)
        self._open = AESGCM(recv_key)
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()

    def _next_counter(self) -> int:
        with self._send_lock:
            self.send_counter += 1
            self.last_activity = self.clock.now()
            return self.send_counter

    def seal(self, payload: bytes) -> bytes:
        if self.state is TunnelState.DEAD:
            raise TunnelDead(f"tunnel to {self.peer_overlay_ip} is dead")
        counter = self._next_counter()
        header = OverlayPacket(PacketType.DATA, self.local_ip, counter).header()
        sealed = self._seal.encrypt(nonce_for(self.local_ip, counter), bytes(payload), header)
        return encode_packet(OverlayPacket(PacketType.DATA, self.local_ip, counter, sealed))

    def send(self, payload: bytes) -> bytes:
        frame = self.seal(payload)
        if self.transmit is not None:
            self.transmit(frame)
        return frame

    def _accept_counter(self, counter: int) -> bool:
        # caller holds _recv_lock
        if counter == 0:
            return False
        if counter > self.highest_recv_counter:
            shift = counter - self.highest_recv_counter
            self.replay_window = ((self.replay_window << shift) | 1) & ((1 << REPLAY_WINDOW) - 1)
            self.highest_recv_counter = counter
            return True
        offset = self.highest_recv_counter - counter
        if offset >= REPLAY_WINDOW:
            return False
        bit = 1 << offset
        if self.replay_window & bit:
            return False
        self.replay_window |= bit
        return True

    def open(self, frame: bytes) -> bytes:
        """Authenticate and replay-check one DATA frame without any delay."""
        if self.state is TunnelState.DEAD:
            raise TunnelDead(f"tunnel to {self.peer_overlay_ip} is dead")
        try:
            pkt = decode_packet(frame)
        except PacketError as exc:
            raise AuthFail(str(exc)) from exc
        if pkt.ptype is not PacketType.DATA or pkt.sender_ip != self.peer_overlay_ip:
            raise AuthFail("frame does not belong to this tunnel")
        if len(pkt.payload) < TAG_LEN:
            raise AuthFail("ciphertext shorter than the tag")
        try:
            plain = self._open.decrypt(
                nonce_for(pkt.sender_ip, pkt.counter), pkt.payload, bytes(frame[:HEADER_LEN])
            )
        except InvalidTag:
            raise AuthFail("tag mismatch") from None
        with self._recv_lock:
            if not self._accept_counter(pkt.counter):
                raise Replay(f"counter {pkt.counter} rejected")
            now = self.clock.now()
            self.last_recv = now
            self.last_activity = now
        return plain

    def recv(self, frame: bytes) -> bytes:
        plain = self.open(frame)
        if self.emulator is not None:
            self.clock.sleep(self.emulator.one_way())
        return plain

    def note_keepalive(self, pkt: OverlayPacket) -> None:
        if pkt.sender_ip != self.peer_overlay_ip or self.state is TunnelState.DEAD:
            return
        with self._recv_lock:
            self.last_recv = self.clock.now()

    def keepalive_tick(self, now: float) -> OverlayPacket | None:
        if self.state is not TunnelState.ESTABLISHED:
            return None
        if now - self.last_recv >= MISSED_KEEPALIVES * self.keepalive_interval:
            self.state = TunnelState.DEAD
            return None
        if now - self.last_activity < self.keepalive_interval:
            return None
        with self._send_lock:
            self.send_counter += 1
            self.last_activity = now
            counter = self.send_counter
        return OverlayPacket(PacketType.KEEPALIVE, self.local_ip, counter)


def send(tunnel: Tunnel, payload: bytes) -> bytes:
    return tunnel.send(payload)


def recv(tunnel: Tunnel, frame: bytes) -> bytes:
    return tunnel.recv(frame)


def keepalive_tick(tunnel: Tunnel, now: float) -> OverlayPacket | None:
    return tunnel.keepalive_tick(now)
