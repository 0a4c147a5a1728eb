"""Millisecond clocks shared by the overlay, gateway and brokers.

Benchmarks run on :class:`VirtualClock` so that emulated delays cost no
wall time and re-runs are bit-for-bit reproducible.
"""

from __future__ import annotations

import threading
import time


class WallClock:
    def now(self) -> float:
        return time.monotonic() * 1000.0

    def sleep(self, ms: float) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)


class VirtualClock:
    """A clock that only moves when told to.

    ``sleep`` advances the shared time, which models a single logical
    thread of control. Drivers that interleave many actors set the time
    explicitly with :meth:`advance_to`.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._now

    def sleep(self, ms: float) -> None:
        if ms > 0:
            with self._lock:
                self._now += ms

    def advance_to(self, t: float) -> None:
        with self._lock:
            if t > self._now:
                self._now = float(t)
