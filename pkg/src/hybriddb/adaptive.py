"""Per-call choice between the software ciphertext operators and the enclave.

For a call of kind k with result scheme s:

    C_soft = C_calc_soft(k) + C_decide(k, software)
    C_tee  = C_fixed + C_calc_tee(k, s) + C_runtime(k, s) + C_decide(k, tee)

C_decide grows linearly with the number of in-flight calls of the same kind
on the same path. C_runtime is read off the probe history: the excess of the
windowed median over the startup baseline, scaled to the call's own cost.
"""
from __future__ import annotations

import csv
import enum
import statistics
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .enclave.probe import ProbeHistory, ProbeSample


class Path(str, enum.Enum):
    SOFTWARE = "software"
    TEE = "tee"


class Regime(str, enum.Enum):
    NORMAL = "normal"
    REPLACEMENT = "replacement"


BOTH = (Path.SOFTWARE, Path.TEE)


@dataclass
class CostModelParams:
    soft_calc: dict[str, float]
    tee_calc: dict[tuple[str, str], float]
    c_fixed: float
    decide_unit_cost: float = 0.05
    baseline: float | None = None
    tau: float = 1.5
    ema_alpha: float = 0.2

    def __post_init__(self):
        vals = list(self.soft_calc.values()) + list(self.tee_calc.values())
        if any(v < 0 for v in vals) or self.c_fixed < 0 or self.decide_unit_cost < 0:
            raise ValueError("cost parameters must be non-negative")
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        if not 0 < self.ema_alpha <= 1:
            raise ValueError("ema_alpha must be in (0, 1]")

    def tee_cost(self, kind: str, scheme: str) -> float:
        try:
            return self.tee_calc[(kind, scheme)]
        except KeyError:
            return self.tee_calc[(kind, "*")]


def _median(samples: Iterable[ProbeSample]) -> float | None:
    d = [s.duration for s in samples]
    return statistics.median(d) if d else None


def classify_regime(samples: list[ProbeSample], baseline: float | None, tau: float = 1.5) -> Regime:
    med = _median(samples)
    if med is None or baseline is None:
        return Regime.NORMAL
    return Regime.REPLACEMENT if med > tau * baseline else Regime.NORMAL


def estimate_c_runtime(samples: list[ProbeSample], baseline: float | None, ratio: float = 1.0) -> float:
    med = _median(samples)
    if med is None or baseline is None:
        return 0.0
    return max(0.0, med - baseline) * ratio


@dataclass(frozen=True, slots=True)
class Decision:
    timestamp: float
    kind: str
    c_soft: float
    c_tee: float
    path: Path
    regime: Regime
    calls: int = 1


class UnmatchedCompletion(RuntimeError):
    pass


class PathState:
    def __init__(self):
        self.inflight: Counter = Counter()
        self.dispatched: Counter = Counter()
        self.completed: Counter = Counter()
        self.regime = Regime.NORMAL
        self.excess = 0.0
        self._lock = threading.Lock()

    def dispatch(self, kind: str, path: Path) -> None:
        with self._lock:
            self.inflight[(kind, path)] += 1
            self.dispatched[(kind, path)] += 1

    def complete(self, kind: str, path: Path) -> None:
        with self._lock:
            if self.inflight[(kind, path)] <= 0:
                raise UnmatchedCompletion(f"completion without dispatch for {kind}/{path.value}")
            self.inflight[(kind, path)] -= 1
            self.completed[(kind, path)] += 1

    def count(self, kind: str, path: Path) -> int:
        return self.inflight[(kind, path)]


class AdaptiveSwitch:
    def __init__(self, params: CostModelParams, history: ProbeHistory | None = None,
                 clock=None, keep_log: bool = True):
        self.params = params
        self.history = history if history is not None else ProbeHistory()
        self.clock = clock
        self.state = PathState()
        self.log: list[Decision] = [] if keep_log else None
        self.regime_changes: list[tuple[float, Regime]] = []

    def _now(self) -> float:
        return self.clock.now if self.clock is not None else 0.0

    def refresh(self) -> Regime:
        """Re-read the probe window; call after every probe sample."""
        window = self.history.snapshot()
        base = self.history.baseline if self.history.baseline is not None else self.params.baseline
        regime = classify_regime(window, base, self.params.tau)
        if base:
            self.state.excess = estimate_c_runtime(window, base, 1.0 / base)
        if regime is not self.state.regime:
            self.regime_changes.append((self._now(), regime))
        self.state.regime = regime
        return regime

    def c_runtime(self, kind: str, scheme: str, calls: int = 1, entries: int = 1) -> float:
        # excess is already a fraction of the baseline; scale by the group's enclave cost
        p = self.params
        return self.state.excess * (entries * p.c_fixed + calls * p.tee_cost(kind, scheme))

    def costs(self, kind: str, scheme: str, calls: int = 1,
              entries: int | None = None) -> tuple[float, float]:
        """Estimates for a group of ``calls`` calls costing ``entries`` enclave entries."""
        p, st = self.params, self.state
        entries = calls if entries is None else entries
        c_soft = (calls * p.soft_calc.get(kind, float("inf"))
                  + p.decide_unit_cost * st.count(kind, Path.SOFTWARE))
        c_tee = (entries * p.c_fixed + calls * p.tee_cost(kind, scheme)
                 + self.c_runtime(kind, scheme, calls, entries)
                 + p.decide_unit_cost * st.count(kind, Path.TEE))
        return c_soft, c_tee

    def choose(self, kind: str, scheme: str = "bool", available: tuple[Path, ...] = BOTH,
               calls: int = 1, entries: int | None = None) -> Path:
        """Pick a path and mark it in flight; pair every call with :meth:`feedback`."""
        if len(available) == 1:
            path = available[0]
            c_soft = c_tee = float("nan")
        else:
            c_soft, c_tee = self.costs(kind, scheme, calls, entries)
            path = choose_path(c_soft, c_tee)
        self.state.dispatch(kind, path)
        if self.log is not None:
            self.log.append(Decision(self._now(), kind, c_soft, c_tee, path, self.state.regime, calls))
        return path

    def feedback(self, kind: str, path: Path, scheme: str = "bool",
                 observed_calc: float | None = None) -> None:
        """Mark completion and fold the observed per-call calculation cost into the model."""
        self.state.complete(kind, path)
        if observed_calc is None:
            return
        a = self.params.ema_alpha
        if path is Path.SOFTWARE:
            table, k = self.params.soft_calc, kind
        else:
            table = self.params.tee_calc
            k = (kind, scheme) if (kind, scheme) in table else (kind, "*")
        old = table.get(k)
        table[k] = observed_calc if old is None else (1 - a) * old + a * observed_calc

    def tee_share(self, kind: str | None = None, start: float = float("-inf"),
                  end: float = float("inf")) -> float | None:
        """Fraction of calls dispatched to the enclave in ``[start, end)``."""
        tee = total = 0
        for d in self.log or ():
            if start <= d.timestamp < end and (kind is None or d.kind == kind):
                total += d.calls
                if d.path is Path.TEE:
                    tee += d.calls
        return tee / total if total else None

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "kind", "c_soft", "c_tee", "path", "regime", "calls"])
            for d in self.log or ():
                w.writerow([f"{d.timestamp:.3f}", d.kind, f"{d.c_soft:.4f}", f"{d.c_tee:.4f}",
                            d.path.value, d.regime.value, d.calls])


def choose_path(c_soft: float, c_tee: float) -> Path:
    """Argmin of the two estimates; ties go to software."""
    return Path.TEE if c_tee < c_soft else Path.SOFTWARE


def calibrate(runners: dict[str, tuple[Callable[[], float] | None, dict[str, Callable[[], float]]]],
              c_fixed: float, repeats: int = 100, **kw) -> CostModelParams:
    """Seed the static cost tables by timing each op ``repeats`` times per path.

    ``runners`` maps kind -> (software runner, {result scheme: enclave runner});
    each runner performs one call and returns its virtual cost without the entry cost.
    """
    soft, tee = {}, {}
    for kind, (sw, tees) in runners.items():
        if sw is not None:
            soft[kind] = statistics.fmean(sw() for _ in range(repeats))
        for scheme, fn in tees.items():
            tee[(kind, scheme)] = statistics.fmean(fn() for _ in range(repeats))
    return CostModelParams(soft, tee, c_fixed, **kw)
