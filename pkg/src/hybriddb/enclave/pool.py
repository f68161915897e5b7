"""Batched enclave entry: an untrusted task pool split into two sub-pools.

Producers append to the pending pool under one lock. A full batch (or an
expired window) is moved wholesale to the processing pool, which the
simulated in-enclave workers drain under a separate lock, paying one entry
cost per batch. When the pool is full or every worker is busy a task skips
the pool and becomes an ordinary direct call.
"""
from __future__ import annotations

import threading
from collections import deque

from .bridge import BridgeTask, Enclave


class PoolStopped(RuntimeError):
    pass


class TaskPool:
    def __init__(self, enclave: Enclave, batch_size: int | None = None,
                 window_micros: float | None = None, worker_count: int | None = None,
                 capacity: int | None = None):
        cfg = enclave.config
        self.enclave = enclave
        self.batch_size = batch_size or cfg.pool_batch_size
        self.window = cfg.pool_window_micros if window_micros is None else window_micros
        self.worker_count = worker_count or cfg.worker_count
        self.capacity = capacity or cfg.pool_capacity
        self._pending: list[BridgeTask] = []
        self._pending_since: float | None = None
        self._pending_lock = threading.Lock()
        self._processing: deque[list[BridgeTask]] = deque()
        self._proc_lock = threading.Lock()
        self.busy_workers = 0
        self.running = True
        self.submitted = 0
        self.completed = 0
        self.degenerate = 0
        self.batches = 0
        self.charged_micros = 0.0

    @property
    def pending(self) -> int:
        return len(self._pending)

    def submit(self, task: BridgeTask, now: float = 0.0) -> bool:
        """Queue a task. Returns False when it ran as a direct call instead."""
        if not self.running:
            raise PoolStopped("pool is shut down")
        self.submitted += 1
        with self._pending_lock:
            overflow = self.busy_workers >= self.worker_count or len(self._pending) >= self.capacity
            if not overflow:
                if not self._pending:
                    self._pending_since = now
                self._pending.append(task)
                full = len(self._pending) >= self.batch_size
        if overflow:
            _, micros = self.enclave.ecall_bridge(task)
            task.direct = True
            self.degenerate += 1
            self.completed += 1
            self.charged_micros += micros
            return False
        if full:
            self._move()
            self._process()
        return True

    def _move(self) -> None:
        with self._pending_lock:
            batch, self._pending, self._pending_since = self._pending, [], None
        if batch:
            with self._proc_lock:
                self._processing.append(batch)

    def _process(self) -> float:
        total = 0.0
        while True:
            with self._proc_lock:
                if not self._processing:
                    break
                batch = self._processing.popleft()
            total += self.enclave.ecall_batch(batch)
            self.batches += 1
            self.completed += len(batch)
        self.charged_micros += total
        return total

    def window_deadline(self) -> float | None:
        since = self._pending_since
        return None if since is None else since + self.window

    def poll(self, now: float) -> float:
        """Flush a partial batch whose window has expired; returns micros charged."""
        deadline = self.window_deadline()
        if deadline is not None and now >= deadline:
            self._move()
        return self._process()

    def shutdown(self) -> float:
        """Complete everything still queued, then refuse new work."""
        self._move()
        total = self._process()
        self.running = False
        return total
