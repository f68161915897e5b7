"""Micro-benchmark probe run inside the enclave to reveal the paging regime."""
from __future__ import annotations

import enum
import math
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .state import EnclaveState

ELEMENT_BYTES = 8
DEFAULT_PROBE_SIZE = 8192


class ProbeKind(str, enum.Enum):
    BINARY_SEARCH = "binary_search"
    QUICK_SORT = "quick_sort"
    MIXED = "mixed"


@dataclass(frozen=True, slots=True)
class ProbeSample:
    timestamp: float
    duration: float
    kind: ProbeKind
    data_size: int


def probe_steps(kind: ProbeKind, n: int) -> float:
    lg = math.log2(max(n, 2))
    sort, search = n * lg, n * lg
    if kind is ProbeKind.QUICK_SORT:
        return sort
    if kind is ProbeKind.BINARY_SEARCH:
        return search
    return sort + search


def unpaged_duration(kind: ProbeKind, n: int, state: EnclaveState) -> float:
    return probe_steps(kind, n) * state.config.costs.probe_step


def run_probe(kind: ProbeKind = ProbeKind.MIXED, data_size: int = DEFAULT_PROBE_SIZE,
              state: EnclaveState | None = None, history: "ProbeHistory | None" = None,
              seed: int | None = None) -> ProbeSample:
    """Sort random data and binary-search it, inside the enclave's memory.

    The work is real; the reported duration is virtual and includes the
    paging penalty of the enclave's resident set while the probe data is live.
    """
    state = state or EnclaveState()
    kind = ProbeKind(kind)
    rng = np.random.default_rng(seed)
    aid = state.allocate(data_size * ELEMENT_BYTES, "probe")
    try:
        data = rng.integers(0, 1 << 62, size=data_size, dtype=np.int64)
        if kind is not ProbeKind.BINARY_SEARCH:
            data = np.sort(data, kind="quicksort")
        else:
            data.sort()
        if kind is not ProbeKind.QUICK_SORT:
            queries = data[rng.integers(0, data_size, size=data_size)]
            idx = np.searchsorted(data, queries)
            if not np.array_equal(data[idx], queries):
                raise AssertionError("probe self-check failed")
        duration = unpaged_duration(kind, data_size, state) * state.paging_factor()
    finally:
        state.free(aid)
    sample = ProbeSample(state.clock.now, duration, kind, data_size)
    if history is not None:
        history.append(sample)
    return sample


class ProbeHistory:
    """Sliding window of probe samples plus the startup baseline."""

    def __init__(self, window: int = 9):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._samples: deque[ProbeSample] = deque(maxlen=window)
        self.baseline: float | None = None
        self.trace: list[ProbeSample] = []
        self._lock = threading.Lock()

    def record_baseline(self, sample: ProbeSample) -> None:
        with self._lock:
            self.baseline = sample.duration
            self.trace.append(sample)

    def append(self, sample: ProbeSample) -> None:
        with self._lock:
            if self._samples and sample.timestamp < self._samples[-1].timestamp:
                raise ValueError("probe samples must arrive in time order")
            self._samples.append(sample)
            self.trace.append(sample)

    def snapshot(self) -> list[ProbeSample]:
        with self._lock:
            return list(self._samples)

    def __len__(self) -> int:
        return len(self._samples)
