"""Materialize datasets per mode, run the simulator, and gate on correctness.

A run is correct when its post-run state matches plaintext mode for every
check query (as multisets) and, for single-session runs, every individual
statement result matches as well.
"""
from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field

from ..crypto import MasterKey
from ..enclave.config import EnclaveConfig
from ..engine.metrics import MetricsSink
from ..engine.server import Deployment, deploy
from ..schema import Mode
from .sim import SimConfig, SimResult, Simulator
from .workload import Dataset, WorkloadSpec, check_queries, generate_dataset, session_ops

MODES = tuple(m.value for m in Mode)
ENCRYPTED_MODES = tuple(m for m in MODES if m != "plaintext")


class CorrectnessError(AssertionError):
    pass


def materialize(ds: Dataset, mode: Mode | str, master: MasterKey | None = None,
                config: EnclaveConfig | None = None, seed: int = 0, root=None,
                switch_params=None) -> Deployment:
    """Deploy ``mode`` and bulk-load the dataset (setup is not on the virtual clock)."""
    dep = deploy(mode, master=master or MasterKey(bytes(32)), config=config, root=root, seed=seed,
                 switch_params=switch_params)
    for name, (specs, rows, indexes) in ds.tables.items():
        dep.create_table(name, specs, indexes)
        dep.load(name, rows)
    dep.rt.metrics = MetricsSink()
    if dep.state is not None:
        c = dep.state.cache
        c.hits = c.misses = c.evictions = 0
    return dep


def _percentile(xs: list[float], q: float) -> float:
    if not xs:
        return 0.0
    if len(xs) == 1:
        return xs[0]
    return statistics.quantiles(xs, n=100, method="inclusive")[q - 1]


@dataclass
class RunReport:
    mode: str
    spec: dict
    qps: float
    tps: float
    latency_p50: float
    latency_p95: float
    latency_mean: float
    makespan_micros: float
    statements: int
    transactions: int
    storage_bytes: int
    cache_hit_rate: float | None
    path_share: dict[str, dict[str, int]]
    probe_trace: list[tuple[float, float]]
    regime_changes: list[tuple[float, str]]
    enclave_entries: int
    lock_waits: int
    correct: bool | None = None
    mismatches: list[str] = field(default_factory=list)

    def to_row(self) -> dict:
        return {"mode": self.mode, "kind": self.spec["kind"], "scale": self.spec["scale"],
                "read_write_ratio": self.spec["read_write_ratio"],
                "concurrency": self.spec["concurrency"], "ops": self.spec["ops"],
                "seed": self.spec["seed"], "qps": round(self.qps, 3), "tps": round(self.tps, 3),
                "latency_p50_us": round(self.latency_p50, 3),
                "latency_p95_us": round(self.latency_p95, 3),
                "latency_mean_us": round(self.latency_mean, 3),
                "makespan_us": round(self.makespan_micros, 3), "statements": self.statements,
                "transactions": self.transactions, "storage_bytes": self.storage_bytes,
                "cache_hit_rate": "" if self.cache_hit_rate is None else round(self.cache_hit_rate, 4),
                "enclave_entries": self.enclave_entries, "lock_waits": self.lock_waits,
                "correct": "" if self.correct is None else int(self.correct)}


@dataclass
class RunOutcome:
    report: RunReport
    sim: SimResult
    checks: list[Counter]
    deployment: Deployment
    metrics: MetricsSink


def run_checks(dep: Deployment, ds: Dataset) -> list[Counter]:
    out = []
    for sql, params in check_queries(ds):
        out.append(Counter(dep.query(sql, params)))
    return out


def run(mode: Mode | str, spec: WorkloadSpec, config: EnclaveConfig | None = None,
        sim_config: SimConfig | None = None, dataset: Dataset | None = None,
        master: MasterKey | None = None, deployment: Deployment | None = None,
        cache_enabled: bool = True) -> RunOutcome:
    mode = Mode(mode)
    ds = dataset or generate_dataset(spec)
    dep = deployment or materialize(ds, mode, master, config, seed=spec.seed)
    if dep.state is not None:
        dep.state.cache_enabled = cache_enabled
    sessions = [session_ops(spec, ds.counts, sid) for sid in range(spec.concurrency)]
    sim = Simulator(dep, sessions, sim_config, spec.duration_micros, spec.seed).run()
    metrics = dep.rt.metrics
    hit_rate = dep.state.cache.hit_rate if dep.state is not None else None
    entries = dep.rt.enclave.entries if dep.rt.enclave is not None else 0
    # the gate's own queries must not show up in the run's numbers
    dep.rt.metrics = MetricsSink()
    checks = run_checks(dep, ds)

    lat = [o.latency for o in sim.ops]
    secs = sim.makespan / 1e6 if sim.makespan > 0 else float("inf")
    share: dict[str, dict[str, int]] = {}
    for row in metrics.summary():
        share.setdefault(row["kind"], {})[row["path"]] = row["calls"]
    sw = dep.switch
    report = RunReport(
        mode=mode.value, spec=spec.to_dict(),
        qps=sim.statements / secs, tps=sum(o.kind == "write" for o in sim.ops) / secs,
        latency_p50=_percentile(lat, 50), latency_p95=_percentile(lat, 95),
        latency_mean=statistics.fmean(lat) if lat else 0.0,
        makespan_micros=sim.makespan, statements=sim.statements,
        transactions=len(sim.ops), storage_bytes=dep.db.data_bytes(),
        cache_hit_rate=hit_rate,
        path_share=share,
        probe_trace=[(p.timestamp, p.duration) for p in sw.history.trace] if sw else [],
        regime_changes=[(t, r.value) for t, r in sw.regime_changes] if sw else [],
        enclave_entries=entries,
        lock_waits=sim.lock_waits)
    return RunOutcome(report, sim, checks, dep, metrics)


def compare_outcomes(ref: RunOutcome, other: RunOutcome, sequential: bool) -> list[str]:
    """Differences between a run and the plaintext reference; empty means equal."""
    problems = []
    for i, (a, b) in enumerate(zip(ref.checks, other.checks)):
        if a != b:
            problems.append(f"check query {i} differs")
    if len(ref.checks) != len(other.checks):
        problems.append("check query count differs")
    if sequential:
        ra, rb = ref.sim.results, other.sim.results
        if ra.keys() != rb.keys():
            problems.append("statement sets differ")
        for k in sorted(ra.keys() & rb.keys()):
            if Counter(ra[k]) != Counter(rb[k]):
                problems.append(f"statement {k} differs")
    return problems


def run_modes(modes, spec: WorkloadSpec, config: EnclaveConfig | None = None,
              sim_config: SimConfig | None = None, dataset: Dataset | None = None,
              master: MasterKey | None = None, strict: bool = False) -> dict[str, RunOutcome]:
    """Run plaintext as the reference, then every requested mode, and set ``correct``.

    With ``strict`` the first mismatch raises :class:`CorrectnessError`.
    """
    ds = dataset or generate_dataset(spec)
    sequential = spec.concurrency == 1
    ref = run(Mode.PLAINTEXT, spec, config, sim_config, ds, master)
    ref.report.correct = True
    out = {Mode.PLAINTEXT.value: ref}
    for m in modes:
        m = Mode(m).value
        if m == Mode.PLAINTEXT.value:
            continue
        o = run(m, spec, config, sim_config, ds, master)
        o.report.mismatches = compare_outcomes(ref, o, sequential)
        o.report.correct = not o.report.mismatches
        if strict and not o.report.correct:
            raise CorrectnessError(f"{m}: {o.report.mismatches[:5]}")
        out[m] = o
    return out


def report_storage(ds: Dataset, modes=MODES, master: MasterKey | None = None,
                   config: EnclaveConfig | None = None,
                   deployments: dict[str, Deployment] | None = None) -> dict[str, dict]:
    """Encrypted bytes over plaintext bytes, per mode, for one dataset.

    Already materialized deployments can be passed in to skip re-encryption.
    """
    deployments = deployments or {}
    sizes = {}
    for m in dict.fromkeys([Mode.PLAINTEXT.value, *[Mode(x).value for x in modes]]):
        dep = deployments.get(m) or materialize(ds, m, master, config)
        sizes[m] = dep.db.data_bytes()
    base = sizes[Mode.PLAINTEXT.value]
    return {m: {"bytes": b, "ratio": b / base} for m, b in sizes.items()}


@dataclass
class AttestationSummary:
    honest: int
    honest_ok: int
    tampered: int
    tampered_failed_closed: int
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.honest_ok == self.honest and self.tampered_failed_closed == self.tampered


def attestation_trials(honest: int = 100, tampered: int = 100, seed: int = 0,
                       config: EnclaveConfig | None = None) -> AttestationSummary:
    """Honest exchanges must agree on SK and provision keys; tampered ones must fail closed."""
    import random

    from ..crypto import Scheme, derive_column_key
    from ..enclave import EnclaveState, Phase, Transport, attest_and_provision
    from ..enclave.attestation import MESSAGE_COUNT

    rng = random.Random(seed)
    summary = AttestationSummary(honest, 0, tampered, 0)
    for i in range(honest):
        master = MasterKey(rng.randbytes(32))
        state = EnclaveState(config)
        out = attest_and_provision(master, state)
        label = f"t{i}.c"
        good = (out.ok and out.client.sk is not None and out.client.sk == out.enclave.sk
                and state.provisioned
                and state.column_key(label, Scheme.DET) == derive_column_key(master, label, Scheme.DET))
        if good:
            summary.honest_ok += 1
        else:
            summary.failures.append(f"honest session {i}: {out.error}")
    for i in range(tampered):
        state = EnclaveState(config)
        tr = Transport(tamper_index=rng.randrange(MESSAGE_COUNT), rng=random.Random(rng.random()))
        out = attest_and_provision(MasterKey(rng.randbytes(32)), state, transport=tr)
        closed = (not out.ok and not state.provisioned and out.client.sk is None
                  and out.enclave.sk is None and out.client.phase is Phase.FAILED
                  and out.enclave.phase is Phase.FAILED)
        if closed:
            summary.tampered_failed_closed += 1
        else:
            summary.failures.append(f"tampered session {i} at {tr.tampered_at}: did not fail closed")
    return summary
