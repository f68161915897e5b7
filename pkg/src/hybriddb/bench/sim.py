"""Discrete-event simulation of concurrent sessions on the virtual clock.

Each session runs its operation list one statement at a time. A statement is
an executor generator; every work item it yields is priced by the shared
runtime and occupies the session for ``micros * stretch`` where the stretch
models CPU sharing once more sessions are busy than there are cores. Row
locks park a session until released at statement end. In adaptive mode the
enclave probe runs on a fixed virtual interval and its duration is charged
to the next work item.

Everything is single-threaded and ordered by (time, sequence number), so a
run is bit-for-bit reproducible.
"""
from __future__ import annotations

import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field

from ..adaptive import Path
from ..enclave.probe import DEFAULT_PROBE_SIZE, ProbeKind, run_probe
from ..engine.executor import execute
from ..engine.server import Deployment
from ..engine.work import LockRows
from ..schema import Mode
from .workload import Op


@dataclass(frozen=True)
class SimConfig:
    cores: int = 16
    # extra slowdown per oversubscribed core-share (scheduler and cache thrash)
    contention: float = 0.02
    probe_interval_micros: float = 10_000.0
    probe_size: int = DEFAULT_PROBE_SIZE
    # keep decrypted per-statement results (needed for sequential cross-mode checks)
    keep_results: bool = True

    def __post_init__(self):
        if self.cores < 1 or self.probe_interval_micros <= 0 or self.probe_size < 2:
            raise ValueError("cores, probe interval and probe size must be positive")
        if self.contention < 0:
            raise ValueError("contention must be >= 0")

    def stretch(self, running: int) -> float:
        share = max(1.0, running / self.cores)
        return share * (1.0 + self.contention * max(0, running - self.cores) / self.cores)


@dataclass
class OpRecord:
    session: int
    kind: str
    start: float
    end: float

    @property
    def latency(self) -> float:
        return self.end - self.start


@dataclass
class SimResult:
    ops: list[OpRecord] = field(default_factory=list)
    statements: int = 0
    makespan: float = 0.0
    # (session, op index, statement index) -> decrypted rows
    results: dict[tuple[int, int, int], list] = field(default_factory=dict)
    probes: int = 0
    lock_waits: int = 0


class _Session:
    __slots__ = ("sid", "ops", "op_i", "stmt_i", "gen", "send", "work", "op_start", "held",
                 "alloc", "in_pool_tee", "done")

    def __init__(self, sid: int, ops: list[Op]):
        self.sid = sid
        self.ops = ops
        self.op_i = 0
        self.stmt_i = 0
        self.gen = None
        self.send = None
        self.work = None
        self.op_start = 0.0
        self.held: set = set()
        self.alloc = None
        self.in_pool_tee = False
        self.done = False


class Simulator:
    def __init__(self, dep: Deployment, sessions: list[list[Op]], config: SimConfig | None = None,
                 duration_micros: float | None = None, seed: int = 0):
        self.dep = dep
        self.rt = dep.rt
        self.cfg = config or SimConfig()
        self.duration = duration_micros
        self.seed = seed
        self.sessions = [_Session(i, ops) for i, ops in enumerate(sessions)]
        self._heap: list = []
        self._seq = 0
        self._running: set[int] = set()
        self._locks: dict = {}
        self._waiters: dict = defaultdict(deque)
        self._probe_debt = 0.0
        self._next_probe = self.cfg.probe_interval_micros
        self.result = SimResult()

    # -- scheduling -------------------------------------------------------------

    def _schedule(self, t: float, sid: int) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, sid))

    def _alive(self) -> bool:
        return any(not s.done for s in self.sessions)

    def _probes_until(self, t: float) -> None:
        sw = self.dep.switch
        if sw is None:
            return
        while self._next_probe <= t and self._alive():
            self.rt.clock.advance_to(self._next_probe)
            sample = run_probe(ProbeKind.MIXED, self.cfg.probe_size, self.dep.state,
                               history=sw.history, seed=self.seed * 100_003 + self.result.probes)
            sw.refresh()
            self._probe_debt += sample.duration
            self.result.probes += 1
            self._next_probe += self.cfg.probe_interval_micros

    # -- locks ----------------------------------------------------------------------

    def _try_lock(self, s: _Session, keys) -> bool:
        for k in keys:
            owner = self._locks.get(k)
            if owner is not None and owner != s.sid:
                self._waiters[k].append(s.sid)
                self.result.lock_waits += 1
                return False
        for k in keys:
            self._locks[k] = s.sid
            s.held.add(k)
        return True

    def _release(self, s: _Session, now: float) -> None:
        woken = []
        for k in s.held:
            del self._locks[k]
            q = self._waiters.pop(k, None)
            if q:
                woken.extend(q)
        s.held.clear()
        for sid in dict.fromkeys(woken):
            self._schedule(now, sid)

    # -- session steps ----------------------------------------------------------------

    def _start_statement(self, s: _Session, now: float) -> bool:
        """Open the next statement; False when the session has finished."""
        if s.stmt_i == 0:
            if s.op_i >= len(s.ops) or (self.duration is not None and now >= self.duration):
                self._finish(s)
                return False
            s.op_start = now
        sql, params = s.ops[s.op_i].statements[s.stmt_i]
        rq = self.dep.client.rewrite(sql, params)
        s.gen = execute(rq, self.dep.db)
        s.send = None
        s.work = None
        return True

    def _end_statement(self, s: _Session, rs, now: float) -> float:
        """Close a statement; returns the client-side decryption time."""
        self._release(s, now)
        self.result.statements += 1
        client = self.dep.client
        cost = 0.0
        if rs.columns and self.dep.mode is not Mode.PLAINTEXT:
            cost = client.costs.client_decrypt * len(rs.rows) * len(rs.columns)
        if self.cfg.keep_results:
            rows = client.decrypt_results(rs) if rs.columns else [(rs.affected,)]
            self.result.results[(s.sid, s.op_i, s.stmt_i)] = rows
        s.gen = None
        s.stmt_i += 1
        if s.stmt_i == len(s.ops[s.op_i].statements):
            op = s.ops[s.op_i]
            self.result.ops.append(OpRecord(s.sid, op.kind, s.op_start, now + cost))
            s.op_i += 1
            s.stmt_i = 0
        return cost

    def _finish(self, s: _Session) -> None:
        s.done = True
        if s.alloc is not None:
            self.dep.state.free(s.alloc)
            s.alloc = None

    def _step(self, s: _Session, now: float) -> None:
        while True:
            if s.gen is None and not self._start_statement(s, now):
                return
            if s.work is None:
                try:
                    s.work = s.gen.send(s.send)
                except StopIteration as stop:
                    cost = self._end_statement(s, stop.value, now)
                    if cost:
                        self._schedule(now + cost, s.sid)
                        return
                    continue
            work = s.work
            if isinstance(work, LockRows):
                if not self._try_lock(s, work.keys):
                    return
                s.send, s.work = None, None
                continue
            self._perform(s, work, now)
            return

    def _perform(self, s: _Session, work, now: float) -> None:
        rt = self.rt
        rt.session = s.sid
        if rt.pool is not None:
            rt.pool.busy_workers = sum(1 for o in self._running if self.sessions[o].in_pool_tee)
        result, micros = rt.perform(work)
        s.in_pool_tee = rt.pool is not None and rt.last_path is Path.TEE
        micros += self._probe_debt
        self._probe_debt = 0.0
        dt = micros * self.cfg.stretch(len(self._running) + 1)
        s.send, s.work = result, None
        self._running.add(s.sid)
        self._schedule(now + dt, s.sid)

    # -- main loop --------------------------------------------------------------------------

    def run(self) -> SimResult:
        clock = self.rt.clock
        t0 = clock.now
        self._next_probe = t0 + self.cfg.probe_interval_micros
        state = self.dep.state
        for s in self.sessions:
            if state is not None:
                # per-session enclave buffers stay resident while the session is connected
                s.alloc = state.allocate(state.config.session_working_set_bytes, f"session{s.sid}")
            self._schedule(t0, s.sid)
        end = t0
        while self._heap:
            t, _, sid = heapq.heappop(self._heap)
            self._probes_until(t)
            clock.advance_to(max(t, clock.now))
            s = self.sessions[sid]
            self._running.discard(sid)
            if s.done:
                continue
            self._step(s, clock.now)
            end = max(end, clock.now)
        for s in self.sessions:
            if not s.done:
                raise RuntimeError(f"session {s.sid} deadlocked on row locks")
        self.result.makespan = end - t0
        return self.result
