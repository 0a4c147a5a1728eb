import ipaddress

import pytest

from edgefaas.clock import VirtualClock
from edgefaas.overlay import CertificateAuthority, Lighthouse, OverlayNode
from edgefaas.overlay.transport import MemoryFabric

_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "acceptance" in report.keywords:
        _ACCEPTANCE.append((report.nodeid.rsplit("::", 1)[-1], report.outcome))
    elif report.when == "setup" and report.outcome != "passed" and "acceptance" in report.keywords:
        _ACCEPTANCE.append((report.nodeid.rsplit("::", 1)[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")


class Mesh:
    """CA, lighthouse and nodes wired through an in-memory fabric."""

    def __init__(self):
        self.clock = VirtualClock()
        self.fabric = MemoryFabric()
        self.ca = CertificateAuthority()
        self.lh_transport = self.fabric.attach(port=4242)
        self.lighthouse = Lighthouse(self.ca.public_key, clock=self.clock)
        self.lh_transport.listen(self._serve)

    def _serve(self, frame, addr):
        for out, dst in self.lighthouse.handle(frame, addr):
            self.lh_transport.sendto(out, dst)

    @property
    def lh(self):
        return self.lh_transport.address

    def node(self, name, ip, ca=None, register=True, **kw):
        ca = ca or self.ca
        kw.setdefault("punch_timeout_ms", 200)
        kw.setdefault("probe_spacing_ms", 10)
        n = OverlayNode(ca.issue_identity(name, ip), self.ca.public_key, self.fabric.attach(),
                        clock=self.clock, **kw)
        if register:
            n.register(self.lh)
        return n


@pytest.fixture
def mesh():
    return Mesh()


def ip(s):
    return ipaddress.IPv4Address(s)
