import random
import statistics

import numpy as np
import pytest

from edgefaas.overlay.latency import (
    BAREMETAL_LATENCIES,
    OVERLAY_LATENCIES,
    ZERO,
    LatencyProfile,
    LinkEmulator,
    Network,
    clamped_normal_mean,
    link_key,
    sample_delay,
)

# Reference round-trip table, (mean, min, max, std) in ms: baremetal / overlay.
TABLE = {
    ("RS", "RS"): ((0.21, 0.19, 0.30, 0.02), (1.23, 0.85, 1.77, 0.28)),
    ("RS", "test"): ((32.57, 28.37, 44.44, 2.63), (27.57, 25.74, 34.33, 1.63)),
    ("CD", "CD"): ((0.85, 0.31, 4.24, 0.55), (1.32, 0.46, 10.06, 1.13)),
    ("CD", "test"): ((238.9, 227.7, 451.9, 30.35), (231.5, 229.1, 242.4, 1.75)),
    ("OP", "OP"): ((0.33, 0.24, 0.46, 0.05), (0.78, 0.57, 1.25, 0.10)),
    ("OP", "test"): ((0.57, 0.42, 0.69, 0.05), (1.17, 0.79, 1.97, 0.17)),
    ("RS", "CD"): ((231.0, 230.5, 231.6, 0.24), (232.1, 231.6, 234.2, 0.28)),
}


def test_tables_transcribed():
    for key, (bare, overlay) in TABLE.items():
        assert BAREMETAL_LATENCIES[key] == LatencyProfile(*bare)
        assert OVERLAY_LATENCIES[key] == LatencyProfile(*overlay)


def test_zero_profile():
    assert sample_delay(ZERO, 123) == 0.0


def draw(profile, n=10_000, seed=7):
    rng = random.Random(seed)
    return [sample_delay(profile, rng) for _ in range(n)]


def test_op_op_example():
    xs = draw(LatencyProfile(0.78, 0.57, 1.25, 0.10))
    assert abs(statistics.fmean(xs) - 0.78) <= 0.03
    assert 0.57 <= min(xs) and max(xs) <= 1.25


def test_rs_test_example():
    xs = draw(LatencyProfile(27.57, 25.74, 34.33, 1.63))
    assert abs(statistics.fmean(xs) - 27.57) <= 0.2


@pytest.mark.parametrize("profile", list(OVERLAY_LATENCIES.values()) + list(BAREMETAL_LATENCIES.values()),
                         ids=lambda p: f"{p.mean}")
def test_fidelity_every_profile(profile):
    xs = draw(profile)
    assert abs(statistics.fmean(xs) - profile.mean) <= 0.03 * profile.mean
    assert profile.min <= min(xs) and max(xs) <= profile.max


def test_clamped_mean_matches_numeric_integration():
    # reference: trapezoid integration of the clamped density
    loc, std, lo, hi = 1.0, 1.13, 0.46, 10.06
    z = np.linspace(loc - 12 * std, loc + 12 * std, 400_001)
    pdf = np.exp(-0.5 * ((z - loc) / std) ** 2) / (std * np.sqrt(2 * np.pi))
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    ref = trapezoid(np.clip(z, lo, hi) * pdf, z)
    assert clamped_normal_mean(loc, std, lo, hi) == pytest.approx(ref, rel=1e-6)


def test_seeded_sequences_reproduce():
    p = OVERLAY_LATENCIES[("CD", "test")]
    a = LinkEmulator(p, seed=3)
    b = LinkEmulator(p, seed=3)
    assert [a.rtt() for _ in range(50)] == [b.rtt() for _ in range(50)]
    assert LinkEmulator(p, seed=3).one_way() == pytest.approx(LinkEmulator(p, seed=3).rtt() / 2)


def test_disabled_emulator():
    assert LinkEmulator(OVERLAY_LATENCIES[("CD", "test")], enabled=False).rtt() == 0.0


def test_network_streams_are_independent():
    n1 = Network(OVERLAY_LATENCIES, seed=1)
    n2 = Network(OVERLAY_LATENCIES, seed=1)
    for _ in range(10):
        n2.rtt("CD", "test")
    assert [n1.rtt("RS", "test") for _ in range(5)] == [n2.rtt("test", "RS") for _ in range(5)]
    assert n1.has("test", "OP") and not n1.has("OP", "RS")


def test_link_key_unordered():
    assert link_key("test", "RS") == link_key("RS", "test") == ("RS", "test")


def test_invalid_profile():
    with pytest.raises(ValueError):
        LatencyProfile(5.0, 6.0, 7.0, 0.1)
    with pytest.raises(ValueError):
        LatencyProfile(5.0, 4.0, 7.0, -1)
