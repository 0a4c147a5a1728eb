"""Subject-based publish/subscribe broker with one replica per worker node.

Every publish is appended to the origin replica's log, delivered to its
local subscribers and then pushed synchronously to every peer replica; the
publisher is acknowledged only after all peers have confirmed. Times are
explicit milliseconds so the broker runs under a virtual clock.
"""

from __future__ import annotations

import heapq
import logging
import random
import statistics
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .clock import WallClock
from .errors import EdgeFaasError
from .orchestrator import NodeSpec

log = logging.getLogger(__name__)

PER_MESSAGE_WORK = 0.02
RETRIES = 3
RETRY_TIMEOUT_MS = 100.0


class PubSubError(EdgeFaasError):
    pass


class ReplicaUnreachable(PubSubError):
    """Raised after a publish that committed locally but missed some peers."""

    def __init__(self, ack_time: float, unreachable: list[str]) -> None:
        super().__init__(f"replicas unreachable: {', '.join(unreachable)}")
        self.ack_time = ack_time
        self.unreachable = unreachable


class BenchIncomplete(PubSubError):
    pass


@dataclass(frozen=True)
class Message:
    subject: str
    payload: bytes
    publisher: str
    publisher_seq: int

    @property
    def id(self) -> tuple[str, int]:
        return self.publisher, self.publisher_seq


@dataclass
class Subscription:
    subject: str
    replica: str
    client_site: str | None
    deliveries: list[tuple[Message, float]] = field(default_factory=list)

    def __iter__(self):
        return (m for m, _ in self.deliveries)

    def __len__(self) -> int:
        return len(self.deliveries)

    @property
    def messages(self) -> list[Message]:
        return [m for m, _ in self.deliveries]


@dataclass
class BrokerReplica:
    node: str
    site: str
    compute_factor: float = 1.0
    log: list[Message] = field(default_factory=list)
    subscriptions: dict[str, list[Subscription]] = field(default_factory=dict)
    up: bool = True
    busy_until: float = 0.0
    flagged: set = field(default_factory=set)
    _ids: set = field(default_factory=set, repr=False)

    def message_ids(self) -> set:
        return set(self._ids)


@dataclass(frozen=True)
class PublishAck:
    message: Message
    ack_time: float
    committed_at: float


class BrokerCluster:
    """All broker replicas of one deployment plus the links between them."""

    def __init__(
        self,
        nodes: Iterable[NodeSpec],
        network=None,
        *,
        clock=None,
        per_message_work: float = PER_MESSAGE_WORK,
        retries: int = RETRIES,
        retry_timeout_ms: float = RETRY_TIMEOUT_MS,
    ) -> None:
        self.replicas: dict[str, BrokerReplica] = {
            n.name: BrokerReplica(n.name, n.site, n.compute_factor) for n in nodes
        }
        if not self.replicas:
            raise ValueError("a broker needs at least one replica")
        self.network = network
        self.clock = clock or WallClock()
        self.per_message_work = per_message_work
        self.retries = retries
        self.retry_timeout_ms = retry_timeout_ms
        self._last_seq: dict[str, int] = {}
        self._lock = threading.RLock()

    def _one_way(self, a: str | None, b: str | None) -> float:
        if a is None or b is None or self.network is None:
            return 0.0
        return self.network.one_way(a, b)

    def subscribe(self, replica: str, subject: str, client_site: str | None = None) -> Subscription:
        with self._lock:
            rep = self.replicas[replica]
            sub = Subscription(subject, replica, client_site)
            rep.subscriptions.setdefault(subject, []).append(sub)
            return sub

    def _accept(self, rep: BrokerReplica, msg: Message, arrive: float) -> float:
        start = max(arrive, rep.busy_until)
        done = start + self.per_message_work / rep.compute_factor
        rep.busy_until = done
        if msg.id in rep._ids:
            return done
        rep._ids.add(msg.id)
        rep.log.append(msg)
        for sub in rep.subscriptions.get(msg.subject, ()):
            sub.deliveries.append((msg, done + self._one_way(rep.site, sub.client_site)))
        return done

    def publish(self, replica: str, msg: Message, at: float | None = None,
                client_site: str | None = None) -> PublishAck:
        with self._lock:
            last = self._last_seq.get(msg.publisher, -1)
            if msg.publisher_seq <= last:
                raise ValueError(f"publisher_seq must increase for {msg.publisher}")
            self._last_seq[msg.publisher] = msg.publisher_seq
            t = self.clock.now() if at is None else at
            origin = self.replicas[replica]
            done = self._accept(origin, msg, t + self._one_way(client_site, origin.site))
            committed = done
            unreachable: list[str] = []
            for peer in self.replicas.values():
                if peer is origin:
                    continue
                if not peer.up:
                    unreachable.append(peer.node)
                    continue
                arrive = done + self._one_way(origin.site, peer.site)
                confirmed = self._accept(peer, msg, arrive) + self._one_way(peer.site, origin.site)
                committed = max(committed, confirmed)
            if unreachable:
                origin.flagged.add(msg.id)
                committed += self.retries * self.retry_timeout_ms
            ack = PublishAck(msg, committed + self._one_way(origin.site, client_site), committed)
        if unreachable:
            log.warning("message %s missed replicas %s", msg.id, unreachable)
            raise ReplicaUnreachable(ack.ack_time, unreachable)
        return ack

    def set_up(self, replica: str, up: bool) -> None:
        with self._lock:
            self.replicas[replica].up = up

    def heal(self) -> int:
        """Copy messages a recovered replica missed; returns how many were copied."""
        copied = 0
        with self._lock:
            live = [r for r in self.replicas.values() if r.up]
            union: dict[tuple, Message] = {}
            for rep in live:
                for m in rep.log:
                    union.setdefault(m.id, m)
            for rep in live:
                for mid, m in union.items():
                    if mid not in rep._ids:
                        rep._ids.add(mid)
                        rep.log.append(m)
                        copied += 1
                rep.flagged.clear()
        return copied


@dataclass
class PubSubResult:
    config: str
    pub_throughput: float
    sub_throughput: float
    pub_std: float
    sub_std: float
    pub_samples: list[float]
    sub_samples: list[float]
    deliveries: int


def run_pubsub_bench(
    nodes: list[NodeSpec],
    network,
    n_pubs: int,
    m_subs: int,
    msg_size: int = 64,
    total_msgs: int = 10_000,
    reps: int = 5,
    seed: int = 0,
    client_site: str = "test",
    subject: str = "bench",
) -> PubSubResult:
    """N:M throughput benchmark in messages per second of virtual time."""
    if n_pubs < 1 or m_subs < 0 or total_msgs < n_pubs:
        raise ValueError("need at least one publisher and one message per publisher")
    pub_tp: list[float] = []
    sub_tp: list[float] = []
    deliveries = 0
    payload = bytes(msg_size)
    shares = [total_msgs // n_pubs + (1 if i < total_msgs % n_pubs else 0) for i in range(n_pubs)]
    for rep in range(reps):
        net = network(seed * 1000 + rep) if callable(network) else network
        cluster = BrokerCluster(nodes, net)
        rng = random.Random(f"pubsub:{seed}:{rep}")
        names = sorted(cluster.replicas)
        subs = [cluster.subscribe(rng.choice(names), subject, client_site) for _ in range(m_subs)]
        attach = [rng.choice(names) for _ in range(n_pubs)]
        heap = [(0.0, i) for i in range(n_pubs)]
        sent = [0] * n_pubs
        last_ack = 0.0
        while heap:
            t, i = heapq.heappop(heap)
            msg = Message(subject, payload, f"pub-{i}", sent[i])
            ack = cluster.publish(attach[i], msg, at=t, client_site=client_site)
            sent[i] += 1
            last_ack = max(last_ack, ack.ack_time)
            if sent[i] < shares[i]:
                heapq.heappush(heap, (ack.ack_time, i))
        for k, sub in enumerate(subs):
            if len(sub) != total_msgs:
                raise BenchIncomplete(f"subscriber {k} received {len(sub)} of {total_msgs}")
        pub_tp.append(total_msgs / (last_ack / 1000.0))
        if subs:
            last_delivery = max(t for sub in subs for _, t in sub.deliveries)
            n = sum(len(s) for s in subs)
            deliveries += n
            sub_tp.append(n / (last_delivery / 1000.0))
        else:
            sub_tp.append(0.0)

    def sd(xs: list[float]) -> float:
        return statistics.stdev(xs) if len(xs) > 1 else 0.0

    return PubSubResult(
        f"{n_pubs}:{m_subs}",
        statistics.fmean(pub_tp),
        statistics.fmean(sub_tp),
        sd(pub_tp),
        sd(sub_tp),
        pub_tp,
        sub_tp,
        deliveries,
    )
