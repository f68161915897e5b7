"""Secure-memory accounting and key custody for the simulated enclave."""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

from ..crypto import ColumnKey, MasterKey, Scheme, derive_column_key
from .cache import LruCache
from .clock import VirtualClock
from .config import EnclaveConfig


class KeysNotProvisioned(RuntimeError):
    pass


class AuditFailure(AssertionError):
    pass


@dataclass
class Allocation:
    size: int
    tag: str
    last_touch: float


class EnclaveState:
    def __init__(self, config: EnclaveConfig | None = None, clock: VirtualClock | None = None):
        self.config = config or EnclaveConfig()
        self.clock = clock or VirtualClock()
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self.pages: dict[int, Allocation] = {}
        self.resident_bytes = 0
        self.cache = LruCache(self.config.cache_capacity_entries)
        self.cache_enabled = True
        self._master: MasterKey | None = None
        self._keys: dict[tuple[str, Scheme], ColumnKey] = {}
        self.sealed = False
        self.session = None
        self.allocate(self.config.base_resident_bytes, "runtime")

    # -- memory ------------------------------------------------------------

    def allocate(self, size: int, tag: str = "") -> int:
        if size < 0:
            raise ValueError("negative allocation")
        with self._lock:
            aid = next(self._ids)
            self.pages[aid] = Allocation(size, tag, self.clock.now)
            self.resident_bytes += size
            return aid

    def free(self, aid: int) -> None:
        with self._lock:
            a = self.pages.pop(aid)
            self.resident_bytes -= a.size

    def touch(self, aid: int) -> None:
        self.pages[aid].last_touch = self.clock.now

    @property
    def cache_bytes(self) -> int:
        return len(self.cache) * self.config.cache_entry_bytes if self.cache_enabled else 0

    @property
    def effective_resident(self) -> int:
        return self.resident_bytes + self.cache_bytes

    def paging_factor(self) -> float:
        return self.config.paging_factor(self.effective_resident)

    def audit(self) -> None:
        total = sum(a.size for a in self.pages.values())
        if total != self.resident_bytes:
            raise AuditFailure(f"resident {self.resident_bytes} != allocated {total}")
        if len(self.cache) > self.cache.capacity:
            raise AuditFailure("cache over capacity")
        if self._keys and self._master is None:
            raise AuditFailure("column keys present without a provisioned master key")

    # -- keys ------------------------------------------------------------------

    @property
    def provisioned(self) -> bool:
        return self._master is not None

    def provision(self, master: MasterKey) -> None:
        with self._lock:
            self._master = master
            self._keys.clear()

    def wipe(self) -> None:
        with self._lock:
            self._master = None
            self._keys.clear()
            self.cache.clear()

    def column_key(self, label: str, scheme: Scheme) -> ColumnKey:
        k = self._keys.get((label, scheme))
        if k is None:
            if self._master is None:
                raise KeysNotProvisioned("enclave holds no keys; attestation has not completed")
            k = self._keys[(label, scheme)] = derive_column_key(self._master, label, scheme)
        return k

    @property
    def derived_labels(self) -> set[tuple[str, Scheme]]:
        return set(self._keys)
