from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EdgeFaasError


class EmptySamples(EdgeFaasError):
    pass


@dataclass(frozen=True)
class Summary:
    mean: float
    min: float
    max: float
    std: float
    p25: float
    p50: float
    p75: float


def summarize(samples) -> Summary:
    """Mean, extrema, sample std (n-1) and linearly interpolated quartiles."""
    x = np.asarray(list(samples), dtype=float)
    if x.size == 0:
        raise EmptySamples("cannot summarize an empty sample")
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    lo, hi = float(x.min()), float(x.max())
    # guard against interpolation round-off breaking min <= p25 <= p50 <= p75 <= max
    qs = np.clip(np.maximum.accumulate(np.percentile(x, [25, 50, 75])), lo, hi)
    mean = min(max(float(x.mean()), lo), hi)
    return Summary(mean, lo, hi, std, float(qs[0]), float(qs[1]), float(qs[2]))
