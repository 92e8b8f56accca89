"""Monotone nanosecond clocks used for every server-side timestamp."""

from __future__ import annotations

import time


class VirtualClock:
    """Simulation clock advanced explicitly by the owner."""

    def __init__(self, start_ns: int = 0):
        self._now_ns = int(start_ns)

    def now_ns(self) -> int:
        return self._now_ns

    def advance_ns(self, delta_ns: int) -> int:
        if delta_ns < 0:
            raise ValueError("clock cannot move backwards")
        self._now_ns += int(delta_ns)
        return self._now_ns

    def advance_ms(self, delta_ms: float) -> int:
        return self.advance_ns(round(delta_ms * 1_000_000))


class WallClock:
    """Monotonic wall clock, zeroed at construction."""

    def __init__(self):
        self._t0 = time.monotonic_ns()

    def now_ns(self) -> int:
        return time.monotonic_ns() - self._t0
