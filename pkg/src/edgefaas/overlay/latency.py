"""Link latency profiles and the delay-emulation shim.

Profiles hold round-trip statistics in milliseconds. A packet crossing the
link in one direction is delayed by half of a round-trip sample.
"""

from __future__ import annotations

import functools
import hashlib
import math
import random
import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class LatencyProfile:
    mean: float
    min: float
    max: float
    std: float

    def __post_init__(self) -> None:
        if not (self.min <= self.mean <= self.max):
            raise ValueError(f"profile requires min <= mean <= max, got {self}")
        if self.std < 0:
            raise ValueError("profile std must be >= 0")

    def halved(self) -> "LatencyProfile":
        return LatencyProfile(self.mean / 2, self.min / 2, self.max / 2, self.std / 2)


ZERO = LatencyProfile(0.0, 0.0, 0.0, 0.0)

# Round-trip latencies between testbed sites, (mean, min, max, std) in ms.
# "test" is the tester laptop, located on premises.
OVERLAY_LATENCIES: dict[tuple[str, str], LatencyProfile] = {
    ("RS", "RS"): LatencyProfile(1.23, 0.85, 1.77, 0.28),
    ("RS", "test"): LatencyProfile(27.57, 25.74, 34.33, 1.63),
    ("CD", "CD"): LatencyProfile(1.32, 0.46, 10.06, 1.13),
    ("CD", "test"): LatencyProfile(231.5, 229.1, 242.4, 1.75),
    ("OP", "OP"): LatencyProfile(0.78, 0.57, 1.25, 0.10),
    ("OP", "test"): LatencyProfile(1.17, 0.79, 1.97, 0.17),
    ("RS", "CD"): LatencyProfile(232.1, 231.6, 234.2, 0.28),
}

BAREMETAL_LATENCIES: dict[tuple[str, str], LatencyProfile] = {
    ("RS", "RS"): LatencyProfile(0.21, 0.19, 0.30, 0.02),
    ("RS", "test"): LatencyProfile(32.57, 28.37, 44.44, 2.63),
    ("CD", "CD"): LatencyProfile(0.85, 0.31, 4.24, 0.55),
    ("CD", "test"): LatencyProfile(238.9, 227.7, 451.9, 30.35),
    ("OP", "OP"): LatencyProfile(0.33, 0.24, 0.46, 0.05),
    ("OP", "test"): LatencyProfile(0.57, 0.42, 0.69, 0.05),
    ("RS", "CD"): LatencyProfile(231.0, 230.5, 231.6, 0.24),
}

# Site pairs the testbed never measured. The tester sits on premises, so the
# on-premises site reaches the others over the tester's paths.
DERIVED_LATENCIES: dict[tuple[str, str], LatencyProfile] = {
    ("OP", "RS"): OVERLAY_LATENCIES[("RS", "test")],
    ("OP", "CD"): OVERLAY_LATENCIES[("CD", "test")],
}


def link_key(a: str, b: str) -> tuple[str, str]:
    """Canonical unordered key for a site pair."""
    return (a, b) if (a, b) <= (b, a) else (b, a)


def _phi(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2)))


def clamped_normal_mean(loc: float, std: float, lo: float, hi: float) -> float:
    """Expected value of Normal(loc, std) clamped to [lo, hi]."""
    if std == 0:
        return min(max(loc, lo), hi)
    a = (lo - loc) / std
    b = (hi - loc) / std
    return (
        lo * _cdf(a)
        + hi * (1.0 - _cdf(b))
        + loc * (_cdf(b) - _cdf(a))
        + std * (_phi(a) - _phi(b))
    )


@functools.lru_cache(maxsize=256)
def calibrated_location(profile: LatencyProfile) -> float:
    """Location of the underlying normal whose clamped mean is ``profile.mean``.

    Clamping an asymmetric interval drags the mean toward the far bound (the
    CD-CD link would drift by ~11%), so the normal is shifted to compensate.
    """
    if profile.std == 0 or profile.min == profile.max:
        return profile.mean
    lo = profile.min - 10 * profile.std
    hi = profile.max + 10 * profile.std
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if clamped_normal_mean(mid, profile.std, profile.min, profile.max) < profile.mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_delay(profile: LatencyProfile, rng: int | random.Random) -> float:
    """Draw one delay in ms from ``profile``.

    ``rng`` is either a seed or a ``random.Random`` whose state advances,
    so a fixed seed yields a fixed sample sequence.
    """
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    if profile.std == 0:
        return profile.mean
    x = rng.gauss(calibrated_location(profile), profile.std)
    return min(max(x, profile.min), profile.max)


class LinkEmulator:
    """Seeded delay source for one link.

    ``rtt()`` returns a full round-trip sample, ``one_way()`` half of one.
    """

    def __init__(self, profile: LatencyProfile, seed: int = 0, enabled: bool = True) -> None:
        self.profile = profile
        self.enabled = enabled
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def rtt(self) -> float:
        if not self.enabled:
            return 0.0
        with self._lock:
            return sample_delay(self.profile, self._rng)

    def one_way(self) -> float:
        return self.rtt() / 2.0


def _stream_seed(seed: int, key: tuple[str, str]) -> int:
    digest = hashlib.sha256(f"{seed}:{key[0]}-{key[1]}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Network:
    """Latency profiles for every site pair, each with its own seeded stream.

    Per-link streams keep a link's samples independent of how traffic on
    other links interleaves with it.
    """

    def __init__(self, profiles: dict[tuple[str, str], LatencyProfile], seed: int = 0,
                 enabled: bool = True) -> None:
        self.profiles = {link_key(*k): v for k, v in profiles.items()}
        self.seed = seed
        self.enabled = enabled
        self._links: dict[tuple[str, str], LinkEmulator] = {}
        self._lock = threading.Lock()

    def has(self, a: str, b: str) -> bool:
        return link_key(a, b) in self.profiles

    def profile(self, a: str, b: str) -> LatencyProfile:
        try:
            return self.profiles[link_key(a, b)]
        except KeyError:
            raise KeyError(f"no latency profile for link {a}-{b}") from None

    def link(self, a: str, b: str) -> LinkEmulator:
        key = link_key(a, b)
        with self._lock:
            em = self._links.get(key)
            if em is None:
                em = LinkEmulator(self.profile(a, b), _stream_seed(self.seed, key), self.enabled)
                self._links[key] = em
            return em

    def rtt(self, a: str, b: str) -> float:
        return self.link(a, b).rtt()

    def one_way(self, a: str, b: str) -> float:
        return self.link(a, b).one_way()
