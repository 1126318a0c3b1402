"""Injectable clock.  Tokens expire against this clock, never the wall clock,
so expiry behaviour is deterministic under test."""

from __future__ import annotations

import time


class Clock:
    """Monotonic emulator clock.  ``now()`` is seconds since an arbitrary
    epoch; only differences are meaningful."""

    def now(self) -> float:
        return time.monotonic()


class ManualClock(Clock):
    """Test clock advanced explicitly."""

    def __init__(self, start: float = 1_000_000.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def advance(self, seconds: float) -> None:
        self._t += seconds
