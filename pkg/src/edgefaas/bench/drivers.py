"""Workload drivers for the four benchmark families.

All drivers run on a :class:`~edgefaas.clock.VirtualClock`; every delay
comes from the scenario's seeded link streams, so a re-run with the same
scenario and seed reproduces every sample exactly.
"""

from __future__ import annotations

import heapq
import ipaddress
import logging
import random
from dataclasses import dataclass

from ..clock import VirtualClock
from ..docstore import PercolatorStore, SyntheticCorpus
from ..errors import EdgeFaasError
from ..faas.gateway import AutoscaleConfig, FunctionSpec, Gateway, Outcome, WorkloadKind
from ..orchestrator import Orchestrator, SchedulerPolicy
from ..overlay.cert import CertificateAuthority
from ..overlay.lighthouse import Lighthouse
from ..overlay.node import OverlayNode
from ..overlay.transport import MemoryFabric
from ..pubsub import run_pubsub_bench
from .report import BenchReport
from .scenario import TESTER, Scenario

log = logging.getLogger(__name__)

DESK_SENTIMENT_REQUESTS = 2_000
DESK_HEAVY_REQUESTS = 250
FULL_SENTIMENT_REQUESTS = 200_000
FULL_HEAVY_REQUESTS = 25_000
DESK_COOLDOWN_MS = 30_000.0
FULL_COOLDOWN_MS = 900_000.0
PUBSUB_CONFIGS = ((1, 1), (1, 5), (5, 1), (5, 5))

SENTIMENT_BODY = b"The serverless edge platform is great, not bad at all, and the Pis are happy."
HEAVY_BODY = b"https://images.example.org/samples/cat-0001.jpg"

# Probe timestamp resolution (ms); also absorbs clock round-off on subtraction.
PROBE_RESOLUTION_DIGITS = 6

FUNCTION_ALIASES = {
    "sentiment": WorkloadKind.SENTIMENT,
    "sentiment-analysis": WorkloadKind.SENTIMENT,
    "heavy-classify": WorkloadKind.HEAVY_CLASSIFY,
    "img-classifier-hub": WorkloadKind.HEAVY_CLASSIFY,
}


class LinkDown(EdgeFaasError):
    pass


class DeploymentMissing(EdgeFaasError):
    pass


def function_spec(name: str) -> FunctionSpec:
    try:
        kind = FUNCTION_ALIASES[name]
    except KeyError:
        raise DeploymentMissing(f"unknown function {name!r}") from None
    return FunctionSpec(kind.value, kind)


# -- network latency -----------------------------------------------------


def run_latency_bench(scenario: Scenario, src: str, dst: str, repetitions: int = 500,
                      seed: int | None = None) -> BenchReport:
    """Round-trip pings over an established overlay tunnel between two sites."""
    net = scenario.network(seed)
    if not net.has(src, dst):
        raise LinkDown(f"no link profile between {src} and {dst}")
    link = net.link(src, dst)
    clock = VirtualClock()
    fabric = MemoryFabric()
    ca = CertificateAuthority()
    lh_transport = fabric.attach(port=4242)
    lighthouse = Lighthouse(ca.public_key, clock=clock)
    lh_transport.listen(lambda f, a: [lh_transport.sendto(o, d) for o, d in lighthouse.handle(f, a)])

    def node(name: str, ip: str) -> OverlayNode:
        return OverlayNode(ca.issue_identity(name, ip), ca.public_key, fabric.attach(),
                           clock=clock, link_for=lambda _ip: link)

    a = node(f"{src}-probe", "10.42.9.1")
    b = node(f"{dst}-probe", "10.42.9.2")
    a.register(lh_transport.address)
    b.register(lh_transport.address)
    a.establish_tunnel(b.overlay_ip, lh_transport.address)
    b.on_data = lambda peer, payload: b.send(peer, payload)

    samples = []
    for i in range(repetitions):
        t0 = clock.now()
        a.send(b.overlay_ip, i.to_bytes(8, "big"))
        peer, payload = a.inbox.get_nowait()
        if peer != ipaddress.IPv4Address(b.overlay_ip) or int.from_bytes(payload, "big") != i:
            raise LinkDown("echo mismatch")
        samples.append(round(clock.now() - t0, PROBE_RESOLUTION_DIGITS))
    return BenchReport.from_samples("latency", scenario.name, f"{src}-{dst}", samples,
                                    {"lighthouse": {str(k): v for k, v in lighthouse.received.items()}})


# -- functions -------------------------------------------------------------


@dataclass
class FaasRun:
    reports: list[BenchReport]
    records: dict[int, list]


def run_faas_bench(
    scenario: Scenario,
    function: str | FunctionSpec,
    thread_counts: list[int],
    total_requests: int,
    policy: SchedulerPolicy | str = SchedulerPolicy.RESOURCE_COUNT,
    *,
    seed: int | None = None,
    cooldown_ms: float = DESK_COOLDOWN_MS,
    timeout_ms: float = 20_000.0,
    autoscale: AutoscaleConfig | None = None,
    body: bytes | None = None,
    keep_records: bool = False,
) -> list[BenchReport] | FaasRun:
    """Closed-loop sweep: ``n`` clients issue ``total_requests`` back to back.

    Each client sends its next request as soon as the previous one returns
    (or times out), so there is no connection reuse between requests.
    Between sweep points the cluster idles for ``cooldown_ms`` to scale down.
    """
    spec = function if isinstance(function, FunctionSpec) else function_spec(function)
    if body is None:
        body = SENTIMENT_BODY if spec.workload_kind is WorkloadKind.SENTIMENT else HEAVY_BODY
    cfg = autoscale or AutoscaleConfig(cooldown_ms=cooldown_ms)
    clock = VirtualClock()
    orchestrator = Orchestrator()
    for n in scenario.fresh_nodes():
        orchestrator.register_node(n)
    gateway = Gateway(orchestrator, scenario.network(seed), clock=clock, autoscale=cfg,
                      client_site=TESTER)
    gateway.deploy_function(spec, policy)

    t = spec.cold_start_ms
    next_tick = cfg.tick_ms * (int(t // cfg.tick_ms) + 1)
    reports: list[BenchReport] = []
    kept: dict[int, list] = {}

    def tick_until(limit: float) -> None:
        nonlocal next_tick
        while next_tick <= limit:
            gateway.autoscale_tick(spec.name, next_tick)
            next_tick += cfg.tick_ms

    for threads in thread_counts:
        if threads < 1:
            raise ValueError("thread counts must be >= 1")
        heap = [(t, i) for i in range(min(threads, total_requests))]
        heapq.heapify(heap)
        issued = 0
        records = []
        end = t
        while heap:
            ti, i = heapq.heappop(heap)
            tick_until(ti)
            _, rec = gateway.invoke(spec.name, body, timeout_ms, at=ti)
            records.append(rec)
            issued += 1
            done = ti + min(rec.response_ms, timeout_ms)
            end = max(end, done)
            if issued + len(heap) < total_requests:
                heapq.heappush(heap, (done, i))
        valid = [r.response_ms for r in records if r.outcome is Outcome.OK]
        counts = {o.value: sum(1 for r in records if r.outcome is o) for o in Outcome}
        meta = {"issued": issued, **counts, "replicas": len(gateway.replicas(spec.name)),
                "policy": SchedulerPolicy(policy).value}
        if valid:
            reports.append(BenchReport.from_samples(f"faas-{spec.workload_kind.value}", scenario.name,
                                                    f"threads={threads}", valid, meta))
        else:
            log.warning("%s threads=%d produced no valid responses", spec.name, threads)
        if keep_records:
            kept[threads] = records
        t = end + cooldown_ms + cfg.tick_ms
        tick_until(t)
    return FaasRun(reports, kept) if keep_records else reports


# -- messaging -------------------------------------------------------------


def run_pubsub_reports(scenario: Scenario, configs=PUBSUB_CONFIGS, msg_size: int = 64,
                       total_msgs: int = 10_000, reps: int = 5, seed: int | None = None) -> list[BenchReport]:
    """Publisher and subscriber throughput (msgs/s) per N:M config, one sample per repetition."""
    seed = scenario.seed if seed is None else seed
    reports = []
    for n_pubs, m_subs in configs:
        res = run_pubsub_bench(
            scenario.fresh_nodes(), lambda s: scenario.network(s), n_pubs, m_subs,
            msg_size, total_msgs, reps, seed, TESTER,
        )
        meta = {"deliveries": res.deliveries, "reps": reps, "msg_size": msg_size, "msgs": total_msgs}
        reports.append(BenchReport.from_samples("pubsub-pub", scenario.name, res.config, res.pub_samples, meta))
        reports.append(BenchReport.from_samples("pubsub-sub", scenario.name, res.config, res.sub_samples, meta))
    return reports


# -- storage ---------------------------------------------------------------


@dataclass
class PercolateRun:
    latencies: list[float]
    matches: list[list]


def percolate_samples(scenario: Scenario, n_queries: int = 1000, n_docs: int = 5000,
                      scoring: bool = True, seed: int | None = None) -> PercolateRun:
    """Per-document latency: client round trip, matching work and shard sync.

    With more than one node every request also pays one round trip to a
    randomly chosen peer holding a replica shard.
    """
    seed = scenario.seed if seed is None else seed
    corpus = SyntheticCorpus(seed)
    store = PercolatorStore()
    for q in corpus.queries(n_queries):
        store.register_query(q)
    docs = corpus.documents(n_docs)
    net = scenario.network(seed)
    rng = random.Random(f"percolate:{seed}")
    nodes = scenario.nodes
    latencies, matches = [], []
    for i, doc in enumerate(docs):
        node = nodes[i % len(nodes)]
        result, work = store.percolate_with_cost(doc, scoring)
        latency = net.rtt(node.site, TESTER) + work / node.compute_factor
        if len(nodes) > 1:
            peer = rng.choice([n for n in nodes if n is not node])
            latency += net.rtt(node.site, peer.site)
        latencies.append(latency)
        matches.append(result)
    return PercolateRun(latencies, matches)


def run_percolate_bench(scenario: Scenario, n_queries: int = 1000, n_docs: int = 5000,
                        scoring: bool = True, seed: int | None = None) -> BenchReport:
    run = percolate_samples(scenario, n_queries, n_docs, scoring, seed)
    return BenchReport.from_samples("percolate", scenario.name, f"scoring={'on' if scoring else 'off'}",
                                    run.latencies, {"queries": n_queries, "docs": n_docs})
