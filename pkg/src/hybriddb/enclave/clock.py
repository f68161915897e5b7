from __future__ import annotations

import threading


class VirtualClock:
    """Monotonic microsecond clock advanced explicitly by the simulator."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    @property
    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        with self._lock:
            if t < self._now:
                raise ValueError(f"clock cannot run backwards ({t} < {self._now})")
            self._now = t

    def advance(self, dt: float) -> None:
        self.advance_to(self._now + dt)
