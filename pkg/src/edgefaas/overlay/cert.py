"""Overlay certificates: Ed25519-signed bindings of a name to an overlay IP.

Canonical serialization, all integers little-endian::

    u16 name_len | name (UTF-8) | overlay_ip (4) | u16 n_groups
    | n_groups x (u16 len | group UTF-8) | u64 not_before | u64 not_after
    | public_key (32) | ca_signature (64)

The signature covers every byte before it.
"""

from __future__ import annotations

import ipaddress
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from ..errors import EdgeFaasError
from .packet import Endpoint

KEY_LEN = 32
SIG_LEN = 64


class CertificateError(EdgeFaasError):
    pass


class DuplicateOverlayIp(CertificateError):
    pass


class MalformedCertificate(CertificateError):
    pass


def public_key_of(secret: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes_raw()


def sign(secret: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def verify_signature(public: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def _put_text(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("text field too long")
    out += struct.pack("<H", len(raw)) + raw


@dataclass(frozen=True)
class Certificate:
    subject_name: str
    overlay_ip: ipaddress.IPv4Address
    groups: tuple[str, ...]
    not_before: int
    not_after: int
    public_key: bytes
    ca_signature: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "overlay_ip", ipaddress.IPv4Address(self.overlay_ip))
        object.__setattr__(self, "groups", tuple(self.groups))
        if len(self.public_key) != KEY_LEN:
            raise ValueError("public_key must be 32 bytes")

    def tbs_bytes(self) -> bytes:
        """Serialization of every field the CA signs."""
        out = bytearray()
        _put_text(out, self.subject_name)
        out += self.overlay_ip.packed
        out += struct.pack("<H", len(self.groups))
        for g in self.groups:
            _put_text(out, g)
        out += struct.pack("<QQ", self.not_before, self.not_after)
        out += self.public_key
        return bytes(out)

    def to_bytes(self) -> bytes:
        if len(self.ca_signature) != SIG_LEN:
            raise ValueError("certificate is unsigned")
        return self.tbs_bytes() + self.ca_signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        cert, end = cls.parse(data)
        if end != len(data):
            raise MalformedCertificate("trailing bytes after certificate")
        return cert

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> tuple["Certificate", int]:
        """Parse one certificate starting at ``offset``; returns (cert, end)."""
        try:
            pos = offset
            name, pos = _get_text(data, pos)
            ip = ipaddress.IPv4Address(bytes(data[pos : pos + 4]))
            pos += 4
            (n_groups,) = struct.unpack_from("<H", data, pos)
            pos += 2
            groups = []
            for _ in range(n_groups):
                g, pos = _get_text(data, pos)
                groups.append(g)
            not_before, not_after = struct.unpack_from("<QQ", data, pos)
            pos += 16
            public_key = bytes(data[pos : pos + KEY_LEN])
            pos += KEY_LEN
            signature = bytes(data[pos : pos + SIG_LEN])
            pos += SIG_LEN
            if len(public_key) != KEY_LEN or len(signature) != SIG_LEN:
                raise MalformedCertificate("certificate truncated")
        except (struct.error, UnicodeDecodeError, ipaddress.AddressValueError) as exc:
            raise MalformedCertificate(str(exc)) from exc
        return cls(name, ip, tuple(groups), not_before, not_after, public_key, signature), pos


def _get_text(data: bytes, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", data, pos)
    pos += 2
    raw = bytes(data[pos : pos + n])
    if len(raw) != n:
        raise MalformedCertificate("text field truncated")
    return raw.decode("utf-8"), pos + n


def verify_certificate(cert: Certificate, ca_public: bytes, now: float | None = None) -> bool:
    if now is None:
        now = time.time()
    if not cert.not_before <= now <= cert.not_after:
        return False
    if len(cert.ca_signature) != SIG_LEN:
        return False
    return verify_signature(ca_public, cert.ca_signature, cert.tbs_bytes())


def verify_certificate_bytes(data: bytes, ca_public: bytes, now: float | None = None) -> bool:
    try:
        cert = Certificate.from_bytes(data)
    except MalformedCertificate:
        return False
    return verify_certificate(cert, ca_public, now)


@dataclass
class NodeIdentity:
    certificate: Certificate
    signing_secret: bytes
    underlay_endpoints: list[Endpoint] = field(default_factory=list)

    def __post_init__(self) -> None:
        if public_key_of(self.signing_secret) != self.certificate.public_key:
            raise CertificateError("signing secret does not match certificate key")

    @property
    def overlay_ip(self) -> ipaddress.IPv4Address:
        return self.certificate.overlay_ip

    def sign(self, message: bytes) -> bytes:
        return sign(self.signing_secret, message)


class CertificateAuthority:
    """Issues node certificates and refuses to hand out an overlay IP twice."""

    def __init__(self, secret: bytes | None = None, name: str = "edgefaas-ca") -> None:
        self.secret = secret if secret is not None else os.urandom(KEY_LEN)
        self.public_key = public_key_of(self.secret)
        self.name = name
        self._issued: set[ipaddress.IPv4Address] = set()
        self._lock = threading.Lock()

    def self_signed(self, validity: int = 10 * 365 * 86400, now: int | None = None) -> Certificate:
        now = int(time.time()) if now is None else now
        cert = Certificate(self.name, ipaddress.IPv4Address(0), (), now, now + validity, self.public_key)
        return _signed(cert, self.secret)

    def issue(
        self,
        subject: str,
        overlay_ip,
        groups=(),
        validity: int = 86400,
        public_key: bytes | None = None,
        now: int | None = None,
    ) -> Certificate:
        ip = ipaddress.IPv4Address(overlay_ip)
        if validity <= 0:
            raise ValueError("validity must be positive")
        if public_key is None:
            public_key = public_key_of(os.urandom(KEY_LEN))
        now = int(time.time()) if now is None else int(now)
        with self._lock:
            if ip in self._issued:
                raise DuplicateOverlayIp(f"{ip} was already issued by this CA")
            self._issued.add(ip)
        cert = Certificate(subject, ip, tuple(groups), now, now + validity, public_key)
        return _signed(cert, self.secret)

    def issue_identity(self, subject: str, overlay_ip, groups=(), validity: int = 86400,
                       now: int | None = None) -> NodeIdentity:
        secret = os.urandom(KEY_LEN)
        cert = self.issue(subject, overlay_ip, groups, validity, public_key_of(secret), now)
        return NodeIdentity(cert, secret)


def _signed(cert: Certificate, secret: bytes) -> Certificate:
    return Certificate(
        cert.subject_name, cert.overlay_ip, cert.groups, cert.not_before, cert.not_after,
        cert.public_key, sign(secret, cert.tbs_bytes()),
    )


def issue_certificate(ca: CertificateAuthority, subject: str, overlay_ip, groups=(),
                      validity: int = 86400, public_key: bytes | None = None) -> Certificate:
    return ca.issue(subject, overlay_ip, groups, validity, public_key)


def save_certificate(path, cert: Certificate) -> None:
    Path(path).write_bytes(cert.to_bytes())


def load_certificate(path) -> Certificate:
    return Certificate.from_bytes(Path(path).read_bytes())


def save_key(path, secret: bytes) -> None:
    p = Path(path)
    p.write_bytes(secret)
    p.chmod(0o600)


def load_key(path) -> bytes:
    data = Path(path).read_bytes()
    if len(data) != KEY_LEN:
        raise CertificateError(f"{path}: expected a {KEY_LEN}-byte key")
    return data
