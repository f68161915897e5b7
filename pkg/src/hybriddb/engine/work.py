"""Units of server work and the runtime that prices and dispatches them.

The executor is a generator: it yields :class:`Work` items and receives each
result back. The runtime picks a path for every item (software or enclave),
runs it, and returns the virtual micros it cost. A sequential driver and the
discrete-event simulator share this code path; only the clock handling differs.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

from ..adaptive import AdaptiveSwitch, Path
from ..enclave.bridge import BridgeTask, Enclave
from ..enclave.clock import VirtualClock
from ..enclave.config import VirtualCosts
from ..enclave.pool import TaskPool
from .metrics import CallRecord, MetricsSink
from .udf import UdfRegistry, default_registry, sw_cmp3, tee_cmp3


class NoPath(RuntimeError):
    pass


class Work:
    kind = "plain"
    scheme = "bool"

    @property
    def calls(self) -> int:
        return 1

    def available(self, rt: "Runtime") -> tuple[Path, ...]:
        return (Path.SOFTWARE,)

    def tee_entries(self, rt: "Runtime") -> int:
        return self.calls

    def run(self, path: Path, rt: "Runtime") -> tuple[object, float]:
        raise NotImplementedError


@dataclass(eq=False)
class PlainWork(Work):
    """Untrusted bookkeeping: ``fn(costs)`` returns ``(result, micros)``."""
    fn: Callable[[VirtualCosts], tuple[object, float]]
    kind: str = "plain"

    def run(self, path, rt):
        return self.fn(rt.costs)


@dataclass(eq=False)
class LockRows(Work):
    """Acquire row locks for one statement; the driver parks the session until granted."""
    keys: frozenset
    kind: str = "lock"

    def run(self, path, rt):
        return None, 0.0


@dataclass(eq=False)
class CallGroup(Work):
    """One UDF applied to many argument tuples; the path is chosen once for the group.

    ``sw`` and ``tee`` are ``(udf kind, [args, ...])``; either may be None when
    the operands for that path do not exist. ``weight`` overrides the call
    count for aggregates whose single argument tuple covers many operands.
    """
    kind: str
    sw: tuple[str, list] | None = None
    tee: tuple[str, list] | None = None
    scheme: str = "bool"
    weight: int | None = None

    @property
    def calls(self) -> int:
        if self.weight is not None:
            return self.weight
        return len((self.sw or self.tee)[1])

    def available(self, rt):
        out = []
        if self.sw is not None and rt.registry.get(self.sw[0]).software is not None:
            out.append(Path.SOFTWARE)
        if (self.tee is not None and rt.enclave is not None
                and rt.registry.get(self.tee[0]).tee is not None):
            out.append(Path.TEE)
        return tuple(out)

    def tee_entries(self, rt):
        n = len(self.tee[1]) if self.tee is not None else 0
        return n if rt.pool is None else math.ceil(n / rt.pool.batch_size)

    def run(self, path, rt):
        if path is Path.SOFTWARE:
            impl = rt.registry.get(self.sw[0]).software
            out, total = [], 0.0
            for args in self.sw[1]:
                r, c = impl(rt.costs, *args)
                out.append(r)
                total += c
            return out, total
        impl = rt.registry.get(self.tee[0]).tee
        tasks = [impl(*args) for args in self.tee[1]]
        micros = rt.run_tasks(tasks)
        return [t.value for t in tasks], micros


@dataclass(eq=False)
class SortWork(Work):
    """Order row ids by an encrypted column; ties break on row id ascending."""
    ids: list[int]
    sw_keys: dict | None = None   # row id -> OreCipher
    tee_keys: dict | None = None  # row id -> Operand
    desc: bool = False
    kind: str = "sort"

    @property
    def calls(self) -> int:
        n = len(self.ids)
        return max(1, int(n * math.log2(n))) if n > 1 else 1

    def available(self, rt):
        out = []
        if self.sw_keys is not None:
            out.append(Path.SOFTWARE)
        if self.tee_keys is not None and rt.enclave is not None:
            out.append(Path.TEE)
        return tuple(out)

    def run(self, path, rt):
        spent = [0.0]
        if path is Path.SOFTWARE:
            def three_way(a, b):
                r, c = sw_cmp3(rt.costs, self.sw_keys[a], self.sw_keys[b])
                spent[0] += c
                return r
        else:
            def three_way(a, b):
                t = tee_cmp3(self.tee_keys[a], self.tee_keys[b])
                spent[0] += rt.run_tasks([t], direct=True)
                return t.value
        sign = -1 if self.desc else 1

        def cmp(a, b):
            return sign * three_way(a, b) or (a > b) - (a < b)
        out = sorted(self.ids, key=functools.cmp_to_key(cmp))
        return out, spent[0]


@dataclass(eq=False)
class IndexScanWork(Work):
    """Range scan over an ORE B-tree; comparisons are charged from the table's counter."""
    table: object
    pos: int
    low: object = None
    high: object = None
    low_inclusive: bool = True
    high_inclusive: bool = True
    kind: str = "index_scan"

    def run(self, path, rt):
        tree = self.table.indexes[self.pos]
        self.table.cmp.take()
        ids = sorted(tree.range_scan(self.low, self.high, self.low_inclusive, self.high_inclusive))
        n = self.table.cmp.take()
        return ids, n * rt.costs.ore_compare + len(ids) * rt.costs.row_fetch


@dataclass(eq=False)
class ClientTrip(Work):
    """Ship intermediate ciphertexts to the client for re-encryption."""
    request: object
    kind: str = "client"

    def run(self, path, rt):
        if rt.client is None:
            raise NoPath("query needs a client round trip but no client is attached")
        return rt.client.round_trip(self.request)


# -- dispatchers ---------------------------------------------------------------------------

class StaticDispatcher:
    def __init__(self, prefer: Path):
        self.prefer = prefer

    def choose(self, work: Work, available, rt) -> tuple[Path, float]:
        return (self.prefer if self.prefer in available else available[0]), 0.0

    def complete(self, work, path, micros, entries, factor, rt) -> None:
        pass


class AdaptiveDispatcher:
    """Per-group decision through :class:`AdaptiveSwitch`, with observed-cost feedback."""

    def __init__(self, switch: AdaptiveSwitch):
        self.switch = switch

    def choose(self, work: Work, available, rt) -> tuple[Path, float]:
        path = self.switch.choose(work.kind, work.scheme, available, calls=work.calls,
                                  entries=work.tee_entries(rt))
        return path, rt.costs.decide_unit if len(available) > 1 else 0.0

    def complete(self, work, path, micros, entries, factor, rt) -> None:
        calls = max(1, work.calls)
        if path is Path.SOFTWARE:
            observed = micros / calls
        else:
            fixed = rt.enclave.config.ecall_fixed_cost_micros
            observed = max(0.0, (micros / factor - entries * fixed) / calls)
        if work.kind in ("plain", "lock", "client", "index_scan"):
            observed = None
        self.switch.feedback(work.kind, path, work.scheme, observed)


@dataclass
class Runtime:
    costs: VirtualCosts = field(default_factory=VirtualCosts)
    registry: UdfRegistry = field(default_factory=default_registry)
    enclave: Enclave | None = None
    pool: TaskPool | None = None
    client: object = None
    dispatcher: object = field(default_factory=lambda: StaticDispatcher(Path.SOFTWARE))
    metrics: MetricsSink = field(default_factory=MetricsSink)
    clock: VirtualClock = field(default_factory=VirtualClock)
    session: int = 0
    # path taken by the most recent perform(); None for skipped empty groups
    last_path: Path | None = None

    def run_tasks(self, tasks: list[BridgeTask], direct: bool = False) -> float:
        if self.enclave is None:
            raise NoPath("enclave work on a runtime without an enclave")
        if self.pool is None or direct:
            return sum(self.enclave.ecall_bridge(t)[1] for t in tasks)
        pool, now = self.pool, self.clock.now
        before = pool.charged_micros
        for t in tasks:
            pool.submit(t, now)
        waited = 0.0
        if pool.pending:
            # a partial batch sits in the pending pool until its window closes
            waited = pool.window
            pool.poll(now + pool.window)
        return pool.charged_micros - before + waited

    def perform(self, work: Work) -> tuple[object, float]:
        available = work.available(self)
        if not available:
            raise NoPath(f"no execution path for {work.kind}")
        if isinstance(work, CallGroup) and not (work.sw or work.tee)[1]:
            self.last_path = None
            return [], 0.0
        path, decide = self.dispatcher.choose(work, available, self)
        factor = self.enclave.state.paging_factor() if self.enclave is not None else 1.0
        e0 = self.enclave.entries if self.enclave is not None else 0
        try:
            result, micros = work.run(path, self)
        except BaseException:
            self.dispatcher.complete(work, path, 0.0, 0, factor, self)
            raise
        entries = (self.enclave.entries - e0) if self.enclave is not None else 0
        self.dispatcher.complete(work, path, micros, entries, factor, self)
        micros += decide
        self.last_path = path
        self.metrics.record(CallRecord(self.clock.now, self.session, work.kind, path.value,
                                       micros, work.calls, entries))
        return result, micros


def drive(gen, rt: Runtime):
    """Run an executor generator to completion on the current clock; returns (value, micros)."""
    total = 0.0
    try:
        work = next(gen)
        while True:
            result, micros = rt.perform(work)
            total += micros
            rt.clock.advance(micros)
            work = gen.send(result)
    except StopIteration as stop:
        return stop.value, total
