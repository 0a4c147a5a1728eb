"""Node registry and greedy replica scheduler.

Two scoring policies are available. ``resource-count`` ranks nodes by free
cores times memory and ignores how fast the cores are, which is how the
cluster ends up preferring Raspberry Pis over VMs. ``network-aware`` ranks
nodes by expected response time for a given client and workload.
"""

from __future__ import annotations

import enum
import ipaddress
import threading
from dataclasses import dataclass, field, replace
from typing import Mapping

from .errors import EdgeFaasError


class OrchestratorError(EdgeFaasError):
    pass


class DuplicateNode(OrchestratorError):
    pass


class UnknownNode(OrchestratorError):
    pass


class InsufficientCapacity(OrchestratorError):
    pass


class SchedulerPolicy(str, enum.Enum):
    RESOURCE_COUNT = "resource-count"
    NETWORK_AWARE = "network-aware"


SITES = ("OP", "RS", "CD")


@dataclass
class NodeSpec:
    name: str
    site: str
    overlay_ip: ipaddress.IPv4Address
    cpu_cores: int
    memory_gb: float
    compute_factor: float = 1.0
    allocated_replicas: int = 0

    def __post_init__(self) -> None:
        self.overlay_ip = ipaddress.IPv4Address(self.overlay_ip)
        if self.site not in SITES:
            raise ValueError(f"unknown site {self.site!r}")
        if self.cpu_cores < 1:
            raise ValueError("cpu_cores must be >= 1")
        if self.compute_factor <= 0:
            raise ValueError("compute_factor must be > 0")
        if not 0 <= self.allocated_replicas <= self.max_replicas:
            raise ValueError("allocated_replicas out of range")

    @property
    def max_replicas(self) -> int:
        # one replica per core
        return self.cpu_cores

    @property
    def spare(self) -> int:
        return self.max_replicas - self.allocated_replicas


@dataclass
class Placement:
    workload: str
    assignments: list[tuple[str, int]] = field(default_factory=list)
    policy_used: SchedulerPolicy = SchedulerPolicy.RESOURCE_COUNT
    order: list[str] = field(default_factory=list, compare=False)

    @property
    def total(self) -> int:
        return sum(n for _, n in self.assignments)

    def nodes(self) -> list[str]:
        """Node names, one entry per replica, in the order they were picked."""
        return list(self.order) or [name for name, n in self.assignments for _ in range(n)]


@dataclass
class ScheduleContext:
    """What the network-aware policy needs to know.

    ``client_rtt`` maps a node name or a site to the client's round-trip
    time in ms; node names take precedence.
    """

    client_rtt: Mapping[str, float] = field(default_factory=dict)
    work_units: float = 0.0

    def rtt_for(self, node: NodeSpec) -> float:
        if node.name in self.client_rtt:
            return self.client_rtt[node.name]
        if node.site in self.client_rtt:
            return self.client_rtt[node.site]
        raise KeyError(f"no client rtt for node {node.name} (site {node.site})")


def score_resource_count(node: NodeSpec) -> float:
    free_cores = max(node.cpu_cores - node.allocated_replicas, 0)
    return float(free_cores * node.memory_gb)


def score_network_aware(node: NodeSpec, client_rtt_ms: float, work_units: float) -> float:
    """Expected response time in ms; lower is better."""
    if work_units < 0:
        raise ValueError("work_units must be >= 0")
    return client_rtt_ms + work_units / node.compute_factor


class Orchestrator:
    def __init__(self) -> None:
        self._nodes: dict[str, NodeSpec] = {}
        self._lock = threading.RLock()

    def register_node(self, spec: NodeSpec) -> None:
        with self._lock:
            if spec.name in self._nodes:
                raise DuplicateNode(spec.name)
            self._nodes[spec.name] = replace(spec, allocated_replicas=0)

    def nodes(self) -> list[NodeSpec]:
        with self._lock:
            return [replace(n) for n in sorted(self._nodes.values(), key=lambda n: n.name)]

    def node(self, name: str) -> NodeSpec:
        with self._lock:
            try:
                return replace(self._nodes[name])
            except KeyError:
                raise UnknownNode(name) from None

    def spare_capacity(self) -> int:
        with self._lock:
            return sum(n.spare for n in self._nodes.values())

    def schedule(
        self,
        workload: str,
        replicas: int,
        policy: SchedulerPolicy | str = SchedulerPolicy.RESOURCE_COUNT,
        context: ScheduleContext | None = None,
    ) -> Placement:
        """Place ``replicas`` one at a time on the best-scoring node and commit."""
        policy = SchedulerPolicy(policy)
        context = context or ScheduleContext()
        with self._lock:
            if replicas < 0:
                raise ValueError("replicas must be >= 0")
            if self.spare_capacity() < replicas:
                raise InsufficientCapacity(
                    f"{workload}: {replicas} replicas requested, {self.spare_capacity()} slots free"
                )
            trial = {name: replace(n) for name, n in self._nodes.items()}
            order: list[str] = []
            for _ in range(replicas):
                best = self._pick(trial.values(), policy, context)
                best.allocated_replicas += 1
                order.append(best.name)
            for name in order:
                self._nodes[name].allocated_replicas += 1
        counts: dict[str, int] = {}
        for name in order:
            counts[name] = counts.get(name, 0) + 1
        return Placement(workload, list(counts.items()), policy, order)

    @staticmethod
    def _pick(nodes, policy: SchedulerPolicy, context: ScheduleContext) -> NodeSpec:
        candidates = [n for n in nodes if n.spare > 0]
        if policy is SchedulerPolicy.RESOURCE_COUNT:
            key = lambda n: (-score_resource_count(n), n.name)
        else:
            key = lambda n: (score_network_aware(n, context.rtt_for(n), context.work_units), n.name)
        return min(candidates, key=key)

    def reserve(self, node_name: str, count: int = 1) -> None:
        """Pin ``count`` replicas to a node, bypassing scoring (state restore)."""
        with self._lock:
            node = self._nodes.get(node_name)
            if node is None:
                raise UnknownNode(node_name)
            if node.spare < count:
                raise InsufficientCapacity(f"{node_name}: {count} requested, {node.spare} free")
            node.allocated_replicas += count

    def release(self, node_name: str, count: int = 1) -> None:
        with self._lock:
            node = self._nodes.get(node_name)
            if node is None:
                raise UnknownNode(node_name)
            node.allocated_replicas = max(0, node.allocated_replicas - count)

    def status_table(self) -> str:
        rows = [("NAME", "SITE", "OVERLAY IP", "CORES", "MEM GB", "FACTOR", "REPLICAS")]
        for n in self.nodes():
            rows.append((n.name, n.site, str(n.overlay_ip), str(n.cpu_cores), f"{n.memory_gb:g}",
                         f"{n.compute_factor:g}", f"{n.allocated_replicas}/{n.max_replicas}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
