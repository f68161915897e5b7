from collections import Counter

import pytest

from hybriddb.bench import (SimConfig, WorkloadKind, WorkloadSpec, check_queries, generate_dataset,
                            materialize, report_storage, run, run_modes, session_ops,
                            tpcc_row_counts)
from hybriddb.bench.report import load_results, summary_text, write_run
from hybriddb.bench.workload import TPCC_TABLES, dataset_fingerprint, synthetic_rows
from hybriddb.crypto import Scheme
from hybriddb.schema import Mode

TINY = WorkloadSpec(WorkloadKind.TPCC_LIKE, scale=0.001, ops=4)
SYNTH = WorkloadSpec(WorkloadKind.SYNTHETIC, scale=0.002, ops=6)


def test_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        WorkloadSpec(scale=0)
    with pytest.raises(ValueError):
        WorkloadSpec(read_write_ratio=1.5)
    with pytest.raises(ValueError):
        WorkloadSpec(concurrency=0)
    d = SYNTH.to_dict()
    assert WorkloadSpec.from_dict(d) == SYNTH
    with pytest.raises((ValueError, TypeError)):
        WorkloadSpec.from_dict({**d, "bogus": 1})


def test_row_counts_scale_linearly():
    full = tpcc_row_counts(1.0)
    assert full["order_line"] == 300_000
    assert full["item"] == 100_000
    small = tpcc_row_counts(0.01)
    assert small["order_line"] == 3_000
    assert synthetic_rows(1.0) == 15_000


def test_tpcc_schema_has_93_columns():
    assert sum(len(cols) for cols in TPCC_TABLES.values()) == 93


def test_dataset_is_deterministic():
    a, b = generate_dataset(TINY), generate_dataset(TINY)
    assert dataset_fingerprint(a) == dataset_fingerprint(b)
    c = generate_dataset(TINY.with_(seed=1))
    assert dataset_fingerprint(a) != dataset_fingerprint(c)
    assert a.counts == tpcc_row_counts(TINY.scale)


def test_session_ops_deterministic_and_mixed():
    counts = tpcc_row_counts(0.01)
    spec = TINY.with_(ops=200)
    a = session_ops(spec, counts, 0)
    assert a == session_ops(spec, counts, 0)
    assert a != session_ops(spec, counts, 1)
    kinds = Counter(op.kind for op in a)
    assert kinds["write"] and (kinds["read_eq"] + kinds["read_range"])
    reads_only = session_ops(spec.with_(read_write_ratio=1.0), counts, 0)
    assert all(op.kind != "write" for op in reads_only)


def test_software_mode_covers_every_column_with_ore():
    ds = generate_dataset(TINY)
    dep = materialize(ds, Mode.SOFTWARE)
    ore_columns = sum(1 for t in dep.db.tables.values()
                      for f in t.layout.fields if f.scheme is Scheme.ORE)
    assert ore_columns == 93


def test_tee_stores_one_rnd_field_per_column():
    ds = generate_dataset(TINY)
    dep = materialize(ds, Mode.STATIC_TEE)
    for t in dep.db.tables.values():
        columns = Counter(f.column for f in t.layout.fields)
        assert set(columns.values()) == {1}
        assert {f.scheme for f in t.layout.fields} == {Scheme.RND}


def test_storage_ordering():
    ds = generate_dataset(TINY)
    s = report_storage(ds, ["software", "static_tee"])
    assert s["plaintext"]["ratio"] == 1.0
    assert s["software"]["bytes"] > s["static_tee"]["bytes"] > s["plaintext"]["bytes"]


def test_check_queries_agree_across_modes_before_any_writes():
    ds = generate_dataset(SYNTH)
    ref = [Counter(materialize(ds, "plaintext").query(q, p)) for q, p in check_queries(ds)]
    dep = materialize(ds, "static_tee")
    assert [Counter(dep.query(q, p)) for q, p in check_queries(ds)] == ref


def _timeline(o):
    return [(r.session, r.kind, r.start, r.end) for r in o.sim.ops]


@pytest.mark.parametrize("mode", ["static_tee", "static_tee_pool", "adaptive"])
def test_simulation_is_bit_reproducible(mode):
    spec = SYNTH.with_(concurrency=4)
    a, b = run(mode, spec), run(mode, spec)
    assert _timeline(a) == _timeline(b)
    assert a.report.makespan_micros == b.report.makespan_micros
    assert a.report.probe_trace == b.report.probe_trace


def test_sequential_modes_all_correct():
    out = run_modes(["software", "static_tee", "static_tee_pool", "adaptive"], TINY, strict=True)
    assert all(o.report.correct for o in out.values())
    assert out["plaintext"].report.qps > out["static_tee"].report.qps


def test_concurrent_writers_contend_for_locks_and_stay_correct():
    spec = WorkloadSpec(WorkloadKind.SYNTHETIC, scale=0.0002, read_write_ratio=0.0,
                        concurrency=6, ops=5)
    out = run_modes(["static_tee", "software"], spec)
    assert all(o.report.correct for o in out.values())
    assert out["static_tee"].report.lock_waits > 0
    # every increment landed exactly once
    assert out["static_tee"].checks == out["plaintext"].checks


def test_duration_cuts_off_new_operations():
    spec = SYNTH.with_(ops=50, duration_micros=2_000.0)
    o = run("static_tee", spec)
    assert 0 < len(o.sim.ops) < 50
    assert all(r.start < 2_000.0 for r in o.sim.ops)


def test_stretch_model():
    cfg = SimConfig(cores=4, contention=0.1)
    assert cfg.stretch(1) == cfg.stretch(4) == 1.0
    assert cfg.stretch(8) == pytest.approx(2.0 * 1.1)
    with pytest.raises(ValueError):
        SimConfig(cores=0)


def test_gate_metrics_exclude_check_queries():
    o = run("static_tee", SYNTH.with_(read_write_ratio=1.0, eq_fraction=0.0))
    assert "sum" not in o.report.path_share


def test_csv_round_trip(tmp_path):
    out = run_modes(["static_tee"], SYNTH)
    write_run(out, tmp_path, {"plaintext": {"bytes": 10, "ratio": 1.0}})
    data = load_results(tmp_path)
    assert [r["mode"] for r in data["runs"]] == ["plaintext", "static_tee"]
    assert all(r["schema_version"] == "1" for r in data["runs"])
    assert "Path share" in summary_text(data)
    (tmp_path / "runs.csv").write_text("schema_version,mode\n99,x\n")
    with pytest.raises(ValueError):
        load_results(tmp_path)
