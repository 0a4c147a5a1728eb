import json
import urllib.request

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefaas.bench.drivers import run_faas_bench
from edgefaas.bench.scenario import builtin_scenario
from edgefaas.clock import VirtualClock
from edgefaas.faas import http
from edgefaas.faas.gateway import (
    AutoscaleConfig,
    DuplicateFunction,
    FunctionSpec,
    Gateway,
    Outcome,
    ScalingAction,
    UnknownFunction,
    WorkloadKind,
)
from edgefaas.orchestrator import NodeSpec, Orchestrator
from edgefaas.overlay.latency import LatencyProfile, Network

SENTIMENT = FunctionSpec("sentiment", WorkloadKind.SENTIMENT)
HEAVY = FunctionSpec("heavy", WorkloadKind.HEAVY_CLASSIFY)


def gateway(scenario="OP", network="scenario", nodes=None, **kw):
    sc = builtin_scenario(scenario)
    orch = Orchestrator()
    for n in nodes or sc.fresh_nodes():
        orch.register_node(n)
    net = sc.network() if network == "scenario" else network
    return Gateway(orch, net, clock=kw.pop("clock", VirtualClock()), **kw)


def single_node(factor=1.0, cores=4):
    return [NodeSpec("solo", "OP", "10.42.1.2", cores, 8, factor)]


def test_deploy_on_op():
    gw = gateway("OP")
    placement = gw.deploy_function(SENTIMENT)
    assert placement.total == 1
    assert gw.orchestrator.node(placement.nodes()[0]).site == "OP"


def test_deploy_on_as_lands_on_rpis():
    gw = gateway("AS")
    spec = FunctionSpec("s", WorkloadKind.SENTIMENT, min_replicas=4)
    placement = gw.deploy_function(spec, "resource-count")
    assert all(gw.orchestrator.node(n).site == "RS" for n in placement.nodes())


def test_duplicate_and_unknown():
    gw = gateway()
    gw.deploy_function(SENTIMENT)
    with pytest.raises(DuplicateFunction):
        gw.deploy_function(SENTIMENT)
    with pytest.raises(UnknownFunction):
        gw.invoke("missing")


def test_empty_sentiment_zero_latency():
    gw = gateway(network=None, nodes=single_node())
    gw.deploy_function(SENTIMENT)
    body, rec = gw.invoke("sentiment", b"", at=1000.0)
    result = json.loads(body)["result"]
    assert result == {"polarity": 0.0, "subjectivity": 0.0}
    assert rec.response_ms == pytest.approx(1.0)
    assert rec.outcome is Outcome.OK


def test_cold_start_delays_first_call():
    gw = gateway(network=None, nodes=single_node())
    gw.deploy_function(SENTIMENT)
    _, rec = gw.invoke("sentiment", b"", at=0.0)
    assert rec.start == 500.0 and rec.response_ms == pytest.approx(501.0)


def test_heavy_on_cloud_decomposes():
    gw = gateway("CD")
    gw.deploy_function(HEAVY)
    _, rec = gw.invoke("heavy", b"img", at=1000.0)
    assert rec.response_ms == pytest.approx(1231.5, abs=12)
    assert rec.response_ms - rec.rtt_ms - rec.service_ms == pytest.approx(0.0, abs=1e-9)


def test_timeout():
    gw = gateway()
    gw.deploy_function(HEAVY)
    body, rec = gw.invoke("heavy", b"img", timeout_ms=10, at=1000.0)
    assert body is None and rec.outcome is Outcome.TIMEOUT


def test_round_robin_fairness():
    nodes = [NodeSpec(f"n{i}", "OP", f"10.0.0.{i + 1}", 2, 8) for i in range(3)]
    gw = gateway(network=None, nodes=nodes)
    gw.deploy_function(FunctionSpec("s", WorkloadKind.SENTIMENT, min_replicas=3))
    for i in range(100):
        gw.invoke("s", b"x", at=1000.0 + i * 10)
    served = sorted(r.served for r in gw.replicas("s"))
    assert served == [33, 33, 34]


def test_scale_up_on_load():
    gw = gateway(network=None, nodes=single_node(cores=4))
    gw.deploy_function(HEAVY)
    for _ in range(12):
        gw.invoke("heavy", b"x", at=1000.0)
    assert gw.mean_in_flight("heavy", 1500.0) > 5
    assert gw.autoscale_tick("heavy", 1500.0) is ScalingAction.SCALE_UP
    assert len(gw.replicas("heavy")) == 2


def test_scale_down_after_cooldown():
    gw = gateway(network=None, nodes=single_node(cores=4))
    gw.deploy_function(FunctionSpec("s", WorkloadKind.SENTIMENT, min_replicas=1))
    for _ in range(3):
        gw.orchestrator.schedule("s", 1)
        gw._add_replica(gw._get("s"), "solo", 0.0)
    assert len(gw.replicas("s")) == 4
    assert gw.autoscale_tick("s", 20_000.0) is ScalingAction.NONE
    assert gw.autoscale_tick("s", 31_000.0) is ScalingAction.SCALE_DOWN
    assert len(gw.replicas("s")) == 1
    assert gw.orchestrator.spare_capacity() == 3


def test_scale_capped_by_max_replicas():
    gw = gateway(network=None, nodes=single_node(cores=8))
    gw.deploy_function(FunctionSpec("h", WorkloadKind.HEAVY_CLASSIFY, max_replicas=1))
    for _ in range(20):
        gw.invoke("h", b"x", at=1000.0)
    assert gw.autoscale_tick("h", 1500.0) is ScalingAction.HOLD


def test_ramp_replica_count_non_decreasing():
    gw = gateway("OP", autoscale=AutoscaleConfig())
    gw.deploy_function(SENTIMENT)
    counts = []
    t = 1000.0
    for clients in (1, 2, 4, 8, 16, 32, 64):
        for step in range(40):
            for c in range(clients):
                gw.invoke("sentiment", b"x", at=t + c * 0.01)
            t += 25.0
            if step % 40 == 39:
                gw.tick_all(t)
                counts.append(len(gw.replicas("sentiment")))
    assert counts == sorted(counts)
    assert counts[-1] > 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=4), st.integers(10, 300))
def test_bench_conservation_and_bounds(threads, total):
    run = run_faas_bench(builtin_scenario("OP"), "sentiment", threads, total, keep_records=True,
                         cooldown_ms=2000)
    for n in threads:
        records = run.records[n]
        assert len(records) == total
        ok = sum(r.outcome is Outcome.OK for r in records)
        timeout = sum(r.outcome is Outcome.TIMEOUT for r in records)
        error = sum(r.outcome is Outcome.ERROR for r in records)
        assert ok + timeout + error == total
    for rep in run.reports:
        assert rep.meta["issued"] == rep.meta["ok"] + rep.meta["timeout"] + rep.meta["error"]
        assert 1 <= rep.meta["replicas"] <= 20


def test_latency_decomposition_without_queueing():
    gw = gateway("RS")
    gw.deploy_function(SENTIMENT)
    for i in range(50):
        _, rec = gw.invoke("sentiment", b"x", at=1000.0 + i * 1000)
        assert rec.start - rec.enqueue == pytest.approx(rec.rtt_ms / 2)
        assert abs(rec.response_ms - rec.rtt_ms - rec.service_ms) < 5


def test_function_spec_validation():
    assert FunctionSpec("h", "heavy-classify").work_units == 1000
    with pytest.raises(ValueError):
        FunctionSpec("s", WorkloadKind.SENTIMENT, min_replicas=0)


class TestHttp:
    def test_routes(self):
        gw = gateway(network=None, nodes=single_node())
        gw.deploy_function(SENTIMENT)
        status, body = http.handle_request(gw, "POST", "/function/sentiment", b"a great day")
        assert status == 200 and json.loads(body)["result"]["polarity"] == pytest.approx(0.8)
        assert http.handle_request(gw, "POST", "/function/nope")[0] == 404
        assert http.handle_request(gw, "GET", "/function/sentiment")[0] == 405
        assert http.handle_request(gw, "GET", "/elsewhere")[0] == 404
        status, body = http.handle_request(gw, "GET", "/system/functions")
        assert json.loads(body)[0]["name"] == "sentiment"

    def test_gateway_timeout_status(self):
        gw = gateway(network=None, nodes=single_node())
        gw.deploy_function(HEAVY)
        assert http.handle_request(gw, "POST", "/function/heavy", b"x", timeout_ms=1)[0] == 504

    def test_real_server(self):
        gw = gateway(network=Network({("OP", "test"): LatencyProfile(0, 0, 0, 0)}),
                     nodes=single_node(), clock=None)
        gw.deploy_function(FunctionSpec("sentiment", WorkloadKind.SENTIMENT, cold_start_ms=0))
        server, thread = http.serve_in_background(gw)
        try:
            host, port = server.server_address[:2]
            req = urllib.request.Request(f"http://{host}:{port}/function/sentiment", data=b"not good",
                                         method="POST")
            with urllib.request.urlopen(req, timeout=5) as resp:
                payload = json.loads(resp.read())
            assert payload["result"]["polarity"] == pytest.approx(-0.7)
        finally:
            server.shutdown()
            server.server_close()
