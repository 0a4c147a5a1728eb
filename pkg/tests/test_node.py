import os
import time

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from edgefaas.overlay import CertificateAuthority, CertInvalid, Lighthouse, OverlayNode, PeerUnknown, PunchTimeout
from edgefaas.overlay.cert import save_certificate
from edgefaas.overlay.latency import LatencyProfile, LinkEmulator
from edgefaas.overlay.lighthouse import LighthouseRecord, serve
from edgefaas.overlay.packet import PacketType
from edgefaas.overlay.transport import UdpTransport
from edgefaas.overlay.tunnel import TunnelState

from conftest import ip


def test_register_records_observed_endpoint(mesh):
    a = mesh.node("a", "10.42.0.2", register=False)
    recorded = a.register(mesh.lh)
    assert recorded == [a.transport.address]
    assert mesh.lighthouse.lookup("10.42.0.2") == [a.transport.address]


def test_unregistered_peer_unknown(mesh):
    a = mesh.node("a", "10.42.0.2")
    with pytest.raises(PeerUnknown):
        a.establish_tunnel("10.42.0.99", mesh.lh)


def test_register_with_foreign_cert_is_ignored(mesh):
    rogue = mesh.node("r", "10.42.0.5", ca=CertificateAuthority(), register=False)
    with pytest.raises(PunchTimeout):
        rogue.register(mesh.lh)
    assert mesh.lighthouse.received["rejected"] == 1
    assert mesh.lighthouse.lookup("10.42.0.5") == []


def test_record_expires_after_ttl(mesh):
    mesh.node("a", "10.42.0.2")
    mesh.clock.sleep(45_000)
    assert mesh.lighthouse.lookup("10.42.0.2")
    mesh.clock.sleep(1)
    assert mesh.lighthouse.lookup("10.42.0.2") == []


def test_handshake_keys_match_reference(mesh):
    captured = {}

    def factory(name):
        def make():
            secret = os.urandom(32)
            captured[name] = secret
            return secret
        return make

    a = mesh.node("a", "10.42.0.2", ephemeral_factory=factory("a"))
    b = mesh.node("b", "10.42.0.3", ephemeral_factory=factory("b"))
    ta = a.establish_tunnel(b.overlay_ip, mesh.lh)
    tb = b.tunnels[a.overlay_ip]

    pub_b = X25519PrivateKey.from_private_bytes(captured["b"]).public_key()
    shared = X25519PrivateKey.from_private_bytes(captured["a"]).exchange(pub_b)
    okm = HKDF(hashes.SHA256(), 64, None, b"edgefaas-overlay/1" + ip("10.42.0.2").packed + ip("10.42.0.3").packed).derive(shared)
    assert ta.send_key == okm[:32] == tb.recv_key
    assert ta.recv_key == okm[32:] == tb.send_key


def test_wrong_ca_responder_rejected(mesh):
    a = mesh.node("a", "10.42.0.2")
    rogue = mesh.node("r", "10.42.0.5", ca=CertificateAuthority(), register=False)
    mesh.lighthouse.records[rogue.overlay_ip] = LighthouseRecord(rogue.overlay_ip, [rogue.transport.address], 0.0)
    with pytest.raises(CertInvalid):
        a.establish_tunnel(rogue.overlay_ip, mesh.lh)
    assert rogue.overlay_ip not in a.tunnels


def test_wrong_ca_initiator_gets_no_tunnel(mesh):
    b = mesh.node("b", "10.42.0.3")
    rogue = mesh.node("r", "10.42.0.5", ca=CertificateAuthority(), register=False)
    with pytest.raises(PunchTimeout):
        rogue.establish_tunnel(b.overlay_ip, mesh.lh)
    assert b.stats["handshake_rejected"] >= 1
    assert not b.tunnels


def test_blocked_peer_punch_timeout(mesh):
    a = mesh.node("a", "10.42.0.2")
    b = mesh.node("b", "10.42.0.3")
    mesh.fabric.blocked.add(b.transport.address)
    with pytest.raises(PunchTimeout):
        a.establish_tunnel(b.overlay_ip, mesh.lh)
    inits = [f for s, d, f in mesh.fabric.captured if d == b.transport.address and f[2] == PacketType.HANDSHAKE_INIT]
    assert len(inits) == 5


def test_direct_path_property(mesh):
    a = mesh.node("a", "10.42.0.2")
    b = mesh.node("b", "10.42.0.3")
    a.establish_tunnel(b.overlay_ip, mesh.lh)
    for i in range(25):
        a.send(b.overlay_ip, b"m%d" % i)
        b.send(a.overlay_ip, b"r%d" % i)
    frames = mesh.fabric.frames_to(mesh.lh)
    assert frames[PacketType.DATA] == 0
    assert frames[PacketType.LH_QUERY] == 1
    assert mesh.lighthouse.queries_from[a.overlay_ip] == 1
    assert b.inbox.qsize() == 25 and a.inbox.qsize() == 25
    assert b.inbox.get_nowait() == (a.overlay_ip, b"m0")


def test_establish_is_idempotent(mesh):
    a = mesh.node("a", "10.42.0.2")
    b = mesh.node("b", "10.42.0.3")
    t1 = a.establish_tunnel(b.overlay_ip, mesh.lh)
    assert a.establish_tunnel(b.overlay_ip, mesh.lh) is t1


def test_emulated_delay_on_data(mesh):
    link = LinkEmulator(LatencyProfile(20.0, 20.0, 20.0, 0.0), seed=0)
    a = mesh.node("a", "10.42.0.2", link_for=lambda _ip: link)
    b = mesh.node("b", "10.42.0.3", link_for=lambda _ip: link)
    a.establish_tunnel(b.overlay_ip, mesh.lh)
    b.on_data = lambda peer, payload: b.send(peer, payload)
    t0 = mesh.clock.now()
    a.send(b.overlay_ip, b"ping")
    assert a.inbox.get_nowait()[1] == b"ping"
    assert mesh.clock.now() - t0 == pytest.approx(20.0)


def test_tick_keepalive_and_death(mesh):
    a = mesh.node("a", "10.42.0.2")
    b = mesh.node("b", "10.42.0.3")
    a.establish_tunnel(b.overlay_ip, mesh.lh)
    t0 = mesh.clock.now()
    for step in range(1, 40):
        mesh.clock.advance_to(t0 + step * 1000)
        a.tick()
        b.tick()
    assert a.tunnels[b.overlay_ip].state is TunnelState.ESTABLISHED
    assert b.stats[PacketType.KEEPALIVE] > 0
    mesh.fabric.blocked.add(b.transport.address)
    for step in range(40, 80):
        mesh.clock.advance_to(t0 + step * 1000)
        a.tick()
    assert b.overlay_ip not in a.tunnels


def test_udp_loopback_end_to_end(tmp_path):
    ca = CertificateAuthority()
    save_certificate(tmp_path / "ca.crt", ca.self_signed())
    lh_udp = UdpTransport()
    pool = serve(Lighthouse(ca.public_key), lh_udp)
    transports = [UdpTransport(), UdpTransport()]
    try:
        a = OverlayNode(ca.issue_identity("a", "10.42.0.2"), ca.public_key, transports[0])
        b = OverlayNode(ca.issue_identity("b", "10.42.0.3"), ca.public_key, transports[1])
        a.register(lh_udp.address)
        b.register(lh_udp.address)
        a.establish_tunnel(b.overlay_ip, lh_udp.address)
        a.send(b.overlay_ip, b"over udp")
        peer, payload = b.inbox.get(timeout=2)
        assert (peer, payload) == (a.overlay_ip, b"over udp")
        deadline = time.monotonic() + 2
        while a.overlay_ip not in b.tunnels and time.monotonic() < deadline:
            time.sleep(0.01)
        b.send(a.overlay_ip, b"back")
        assert a.inbox.get(timeout=2) == (b.overlay_ip, b"back")
    finally:
        for t in transports + [lh_udp]:
            t.close()
        pool.shutdown()


def test_lighthouse_daemon_process(tmp_path):
    import socket
    import subprocess
    import sys

    ca = CertificateAuthority()
    save_certificate(tmp_path / "ca.crt", ca.self_signed())
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "edgefaas.overlay.lighthouse", "--listen", f"127.0.0.1:{port}",
         "--ca", str(tmp_path / "ca.crt")],
        stderr=subprocess.PIPE,
    )
    transport = UdpTransport()
    try:
        node = OverlayNode(ca.issue_identity("a", "10.42.0.2"), ca.public_key, transport)
        recorded = None
        for _ in range(50):
            try:
                recorded = node.register(("127.0.0.1", port), timeout_ms=200)
                break
            except PunchTimeout:
                continue
        assert recorded == [transport.address]
    finally:
        transport.close()
        proc.terminate()
        proc.wait(timeout=5)
