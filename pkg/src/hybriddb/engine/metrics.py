"""Per-call metrics kept in a bounded ring buffer."""
from __future__ import annotations

import csv
import threading
from collections import defaultdict, deque
from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class CallRecord:
    timestamp: float
    session: int
    kind: str
    path: str
    micros: float
    calls: int
    entries: int = 0


class MetricsSink:
    def __init__(self, capacity: int = 1 << 16):
        self._ring: deque[CallRecord] = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.dropped = 0
        # running totals survive ring eviction
        self.totals: dict[tuple[str, str], list[float]] = defaultdict(lambda: [0, 0.0, 0])

    def record(self, rec: CallRecord) -> None:
        with self._lock:
            if len(self._ring) == self._ring.maxlen:
                self.dropped += 1
            self._ring.append(rec)
            t = self.totals[(rec.kind, rec.path)]
            t[0] += rec.calls
            t[1] += rec.micros
            t[2] += rec.entries

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._ring)

    def calls(self, kind: str | None = None, path: str | None = None) -> int:
        return sum(int(v[0]) for (k, p), v in self.totals.items()
                   if (kind is None or k == kind) and (path is None or p == path))

    def entries(self) -> int:
        return sum(int(v[2]) for v in self.totals.values())

    def summary(self) -> list[dict]:
        out = []
        for (kind, path), (calls, micros, entries) in sorted(self.totals.items()):
            out.append({"kind": kind, "path": path, "calls": int(calls), "micros": micros,
                        "entries": int(entries),
                        "micros_per_call": micros / calls if calls else 0.0})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "session", "kind", "path", "micros", "calls", "entries"])
            for r in self.records():
                w.writerow([f"{r.timestamp:.3f}", r.session, r.kind, r.path, f"{r.micros:.3f}",
                            r.calls, r.entries])
