"""Function gateway: deployment, round-robin routing and autoscaling.

Time is explicit. Every invocation is placed on its replica's timeline
(arrival, possible cold start, FIFO queueing, service), so the gateway
runs the same way under a wall clock or a virtual one. With
``realtime=True`` the caller is held for the emulated latency.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import dataclass, field

from ..clock import WallClock
from ..errors import EdgeFaasError
from ..orchestrator import (
    InsufficientCapacity,
    NodeSpec,
    Orchestrator,
    Placement,
    ScheduleContext,
    SchedulerPolicy,
)
from .workloads import IMAGE_LABELS, run_heavy_classify, run_sentiment, seed_from_body

log = logging.getLogger(__name__)

CLIENT_SITE = "test"


class GatewayError(EdgeFaasError):
    pass


class DuplicateFunction(GatewayError):
    pass


class UnknownFunction(GatewayError):
    pass


class WorkloadKind(str, enum.Enum):
    SENTIMENT = "sentiment"
    HEAVY_CLASSIFY = "heavy-classify"


DEFAULT_WORK_UNITS = {WorkloadKind.SENTIMENT: 1.0, WorkloadKind.HEAVY_CLASSIFY: 1000.0}


@dataclass
class FunctionSpec:
    name: str
    workload_kind: WorkloadKind
    work_units: float | None = None
    min_replicas: int = 1
    max_replicas: int = 20
    cold_start_ms: float = 500.0

    def __post_init__(self) -> None:
        self.workload_kind = WorkloadKind(self.workload_kind)
        if self.work_units is None:
            self.work_units = DEFAULT_WORK_UNITS[self.workload_kind]
        if self.work_units <= 0:
            raise ValueError("work_units must be > 0")
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise ValueError("require 1 <= min_replicas <= max_replicas")


class ReplicaState(str, enum.Enum):
    COLD = "cold"
    WARM = "warm"
    BUSY = "busy"


@dataclass
class Replica:
    id: str
    node: str
    ready_at: float
    last_used: float
    busy_until: float = 0.0
    served: int = 0
    finishes: list[float] = field(default_factory=list)

    def in_flight(self, now: float) -> int:
        self.finishes = [f for f in self.finishes if f > now]
        return len(self.finishes)

    def state(self, now: float) -> ReplicaState:
        if now < self.ready_at:
            return ReplicaState.COLD
        return ReplicaState.BUSY if self.in_flight(now) else ReplicaState.WARM


class Outcome(str, enum.Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    ERROR = "error"


@dataclass(frozen=True)
class InvocationRecord:
    function: str
    replica: str
    node: str
    enqueue: float
    start: float
    finish: float
    outcome: Outcome
    service_ms: float
    rtt_ms: float

    @property
    def response_ms(self) -> float:
        return self.finish - self.enqueue


@dataclass
class AutoscaleConfig:
    scale_up_in_flight: float = 5.0
    window_ms: float = 1000.0
    cooldown_ms: float = 30_000.0
    tick_ms: float = 1000.0


class ScalingAction(str, enum.Enum):
    NONE = "none"
    SCALE_UP = "scale-up"
    SCALE_DOWN = "scale-down"
    HOLD = "hold"


@dataclass
class _Deployment:
    spec: FunctionSpec
    policy: SchedulerPolicy
    context: ScheduleContext
    replicas: list[Replica] = field(default_factory=list)
    rr: int = 0
    next_id: int = 0
    intervals: list[tuple[float, float]] = field(default_factory=list)
    invocations: int = 0


class Gateway:
    def __init__(
        self,
        orchestrator: Orchestrator,
        network=None,
        *,
        clock=None,
        autoscale: AutoscaleConfig | None = None,
        client_site: str = CLIENT_SITE,
        realtime: bool = False,
        default_timeout_ms: float = 20_000.0,
    ) -> None:
        self.orchestrator = orchestrator
        self.network = network
        self.clock = clock or WallClock()
        self.autoscale = autoscale or AutoscaleConfig()
        self.client_site = client_site
        self.realtime = realtime
        self.default_timeout_ms = default_timeout_ms
        self._deployments: dict[str, _Deployment] = {}
        self._nodes: dict[str, NodeSpec] = {}
        self._lock = threading.RLock()

    # -- deployment -----------------------------------------------------

    def default_context(self, spec: FunctionSpec) -> ScheduleContext:
        rtt: dict[str, float] = {}
        if self.network is not None:
            for node in self.orchestrator.nodes():
                if self.network.has(node.site, self.client_site):
                    rtt[node.site] = self.network.profile(node.site, self.client_site).mean
        else:
            rtt = {site: 0.0 for site in ("OP", "RS", "CD")}
        return ScheduleContext(rtt, spec.work_units)

    def deploy_function(
        self,
        spec: FunctionSpec,
        policy: SchedulerPolicy | str = SchedulerPolicy.RESOURCE_COUNT,
        context: ScheduleContext | None = None,
    ) -> Placement:
        policy = SchedulerPolicy(policy)
        with self._lock:
            if spec.name in self._deployments:
                raise DuplicateFunction(spec.name)
            context = context or self.default_context(spec)
            placement = self.orchestrator.schedule(spec.name, spec.min_replicas, policy, context)
            dep = _Deployment(spec, policy, context)
            now = self.clock.now()
            for node in placement.nodes():
                self._add_replica(dep, node, now)
            self._deployments[spec.name] = dep
        return placement

    def _add_replica(self, dep: _Deployment, node: str, now: float) -> Replica:
        if node not in self._nodes:
            self._nodes[node] = self.orchestrator.node(node)
        replica = Replica(f"{dep.spec.name}-{dep.next_id}", node, now + dep.spec.cold_start_ms, now)
        dep.next_id += 1
        dep.replicas.append(replica)
        return replica

    def functions(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "name": d.spec.name,
                    "workload_kind": d.spec.workload_kind.value,
                    "replicas": len(d.replicas),
                    "min_replicas": d.spec.min_replicas,
                    "max_replicas": d.spec.max_replicas,
                    "invocations": d.invocations,
                    "nodes": [r.node for r in d.replicas],
                }
                for d in sorted(self._deployments.values(), key=lambda d: d.spec.name)
            ]

    def replicas(self, name: str) -> list[Replica]:
        with self._lock:
            return list(self._get(name).replicas)

    def _get(self, name: str) -> _Deployment:
        try:
            return self._deployments[name]
        except KeyError:
            raise UnknownFunction(name) from None

    # -- invocation -----------------------------------------------------

    def _route(self, dep: _Deployment, t: float) -> Replica:
        warm = [r for r in dep.replicas if r.ready_at <= t]
        if not warm:
            return min(dep.replicas, key=lambda r: r.ready_at)
        replica = warm[dep.rr % len(warm)]
        dep.rr += 1
        return replica

    def invoke(
        self,
        function: str,
        body: bytes = b"",
        timeout_ms: float | None = None,
        at: float | None = None,
    ) -> tuple[bytes | None, InvocationRecord]:
        timeout_ms = self.default_timeout_ms if timeout_ms is None else timeout_ms
        with self._lock:
            dep = self._get(function)
            t = self.clock.now() if at is None else at
            replica = self._route(dep, t)
            node = self._nodes[replica.node]
            rtt = self.network.rtt(node.site, self.client_site) if self.network is not None else 0.0
            service = dep.spec.work_units / node.compute_factor
            start = max(t + rtt / 2, replica.ready_at, replica.busy_until)
            done = start + service
            finish = done + rtt / 2
            replica.busy_until = done
            replica.finishes.append(finish)
            replica.last_used = max(replica.last_used, finish)
            replica.served += 1
            dep.intervals.append((t, finish))
            dep.invocations += 1
            kind = dep.spec.workload_kind

        outcome = Outcome.OK if finish - t <= timeout_ms else Outcome.TIMEOUT
        record = InvocationRecord(function, replica.id, replica.node, t, start, finish, outcome, service, rtt)
        if self.realtime:
            self.clock.sleep(min(finish - t, timeout_ms))
        if outcome is not Outcome.OK:
            return None, record
        try:
            result = self._execute(kind, body)
        except Exception:
            log.exception("function %s failed", function)
            return None, InvocationRecord(
                function, replica.id, replica.node, t, start, finish, Outcome.ERROR, service, rtt
            )
        response = {
            "result": result,
            "duration_ms": record.response_ms,
            "replica": replica.id,
            "node": replica.node,
        }
        return json.dumps(response, sort_keys=True).encode(), record

    @staticmethod
    def _execute(kind: WorkloadKind, body: bytes) -> dict:
        if kind is WorkloadKind.SENTIMENT:
            polarity, subjectivity = run_sentiment(body.decode("utf-8", errors="replace"))
            return {"polarity": polarity, "subjectivity": subjectivity}
        label, checksum = run_heavy_classify(seed_from_body(body), IMAGE_LABELS)
        return {"label": label, "checksum": checksum}

    # -- autoscaling ----------------------------------------------------

    def mean_in_flight(self, function: str, now: float) -> float:
        """Time-averaged in-flight requests per warm replica over the window."""
        cfg = self.autoscale
        with self._lock:
            dep = self._get(function)
            lo = now - cfg.window_ms
            dep.intervals = [iv for iv in dep.intervals if iv[1] > lo]
            warm = sum(1 for r in dep.replicas if r.ready_at <= now)
            if not warm:
                return 0.0
            busy = sum(max(0.0, min(f, now) - max(s, lo)) for s, f in dep.intervals)
            return busy / cfg.window_ms / warm

    def autoscale_tick(self, function: str, now: float | None = None) -> ScalingAction:
        now = self.clock.now() if now is None else now
        with self._lock:
            dep = self._get(function)
            spec = dep.spec
            if self.mean_in_flight(function, now) > self.autoscale.scale_up_in_flight:
                if len(dep.replicas) >= spec.max_replicas:
                    return ScalingAction.HOLD
                try:
                    placement = self.orchestrator.schedule(spec.name, 1, dep.policy, dep.context)
                except InsufficientCapacity:
                    log.info("%s: no capacity to scale beyond %d replicas", spec.name, len(dep.replicas))
                    return ScalingAction.HOLD
                self._add_replica(dep, placement.nodes()[0], now)
                return ScalingAction.SCALE_UP
            removed = 0
            for replica in reversed(list(dep.replicas)):
                if len(dep.replicas) <= spec.min_replicas:
                    break
                idle = replica.in_flight(now) == 0 and now - replica.last_used >= self.autoscale.cooldown_ms
                if idle:
                    dep.replicas.remove(replica)
                    self.orchestrator.release(replica.node)
                    removed += 1
            return ScalingAction.SCALE_DOWN if removed else ScalingAction.NONE

    def tick_all(self, now: float | None = None) -> dict[str, ScalingAction]:
        with self._lock:
            names = list(self._deployments)
        return {name: self.autoscale_tick(name, now) for name in names}
