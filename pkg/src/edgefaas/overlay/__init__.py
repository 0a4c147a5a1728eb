"""Encrypted overlay mesh: certificates, lighthouse, hole punching, tunnels."""

from .cert import (
    Certificate,
    CertificateAuthority,
    DuplicateOverlayIp,
    NodeIdentity,
    issue_certificate,
    verify_certificate,
)
from .latency import LatencyProfile, LinkEmulator, sample_delay
from .lighthouse import Lighthouse, LighthouseRecord
from .node import CertInvalid, OverlayNode, PeerUnknown, PunchTimeout
from .packet import OverlayPacket, PacketType, decode_packet, encode_packet
from .tunnel import AuthFail, Replay, Tunnel, TunnelDead, TunnelState, keepalive_tick, recv, send

__all__ = [
    "AuthFail", "CertInvalid", "Certificate", "CertificateAuthority", "DuplicateOverlayIp",
    "LatencyProfile", "Lighthouse", "LighthouseRecord", "LinkEmulator", "NodeIdentity",
    "OverlayNode", "OverlayPacket", "PacketType", "PeerUnknown", "PunchTimeout", "Replay",
    "Tunnel", "TunnelDead", "TunnelState", "decode_packet", "encode_packet", "issue_certificate",
    "keepalive_tick", "recv", "sample_delay", "send", "verify_certificate",
]
