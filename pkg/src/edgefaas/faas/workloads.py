"""Deterministic stand-ins for the two benchmark functions.

``run_sentiment`` scores text against a small fixed lexicon and
``run_heavy_classify`` burns a fixed number of mixing rounds before
picking a label. Their timing cost is modelled by the gateway from
``work_units``; these functions only produce the results.
"""

from __future__ import annotations

import functools
import hashlib
import itertools

from ..errors import EdgeFaasError

LEXICON: dict[str, float] = {
    "good": 0.7,
    "great": 0.8,
    "happy": 0.8,
    "excellent": 1.0,
    "amazing": 0.6,
    "nice": 0.6,
    "love": 0.5,
    "fast": 0.2,
    "reliable": 0.4,
    "bad": -0.7,
    "terrible": -1.0,
    "sad": -0.5,
    "awful": -1.0,
    "poor": -0.4,
    "slow": -0.3,
    "hate": -0.8,
    "broken": -0.4,
}
NEGATION = "not"

IMAGE_LABELS = (
    "cat", "dog", "bird", "car", "truck", "bicycle", "person", "tree",
    "building", "boat", "airplane", "flower",
)

MIX_ROUNDS = 10_000
_MASK = (1 << 64) - 1


class EmptyLabels(EdgeFaasError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return ["".join(g) for alnum, g in itertools.groupby(text.lower(), str.isalnum) if alnum]


def run_sentiment(text: str) -> tuple[float, float]:
    """Return (polarity in [-1, 1], subjectivity in [0, 1])."""
    tokens = tokenize(text)
    if not tokens:
        return 0.0, 0.0
    scores: list[float] = []
    covered = 0
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == NEGATION and i + 1 < len(tokens) and tokens[i + 1] in LEXICON:
            scores.append(-LEXICON[tokens[i + 1]])
            covered += 2
            i += 2
            continue
        if tok in LEXICON:
            scores.append(LEXICON[tok])
            covered += 1
        i += 1
    polarity = sum(scores) / len(scores) if scores else 0.0
    return polarity, covered / len(tokens)


def mix64(x: int) -> int:
    """One round of add, multiply, xor-shift and rotate over 64 bits."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 31
    return ((x << 27) | (x >> 37)) & _MASK


def run_heavy_classify(seed: int, labels=IMAGE_LABELS) -> tuple[str, int]:
    if not labels:
        raise EmptyLabels("at least one label is required")
    checksum = _checksum(seed & _MASK)
    return labels[checksum % len(labels)], checksum


@functools.lru_cache(maxsize=4096)
def _checksum(x: int) -> int:
    for _ in range(MIX_ROUNDS):
        x = mix64(x)
    return x


def seed_from_body(body: bytes) -> int:
    return int.from_bytes(hashlib.sha256(body).digest()[:8], "big")
