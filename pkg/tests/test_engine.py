import random
from collections import Counter
from decimal import Decimal

import pytest

from hybriddb.adaptive import Path
from hybriddb.crypto import MalformedCiphertext, MasterKey, Scheme, derive_column_key
from hybriddb.crypto.codec import decrypt_value, encrypt_value
from hybriddb.enclave import Enclave, EnclaveState, Operand, ResultTag
from hybriddb.engine import udf as U
from hybriddb.engine.executor import execute
from hybriddb.engine.metrics import CallRecord, MetricsSink
from hybriddb.engine.planner import PlanCosts, plan_query, predicate_cost
from hybriddb.engine.server import deploy
from hybriddb.engine.storage import Database, EncryptedTable, RowRejected
from hybriddb.engine.udf import DuplicateUdf, UdfRegistry, UnregisteredUdf
from hybriddb.engine.work import Runtime, StaticDispatcher, drive
from hybriddb.rewriter import Client
from hybriddb.schema import ColumnSpec, DataKind, Mode

MASTER = MasterKey(bytes(range(1, 33)))
LABEL = "tbl.col"
MODES = [Mode.PLAINTEXT, Mode.SOFTWARE, Mode.STATIC_TEE, Mode.STATIC_TEE_POOL, Mode.ADAPTIVE]


def key(s):
    return derive_column_key(MASTER, LABEL, s)


@pytest.fixture(scope="module")
def enclave():
    st = EnclaveState()
    st.provision(MASTER)
    return Enclave(st)


@pytest.fixture(scope="module")
def ore_pool():
    rng = random.Random(3)
    vals = [rng.randrange(-2**20, 2**20) for _ in range(150)] + [0, 0, 5, 5]
    return [(v, encrypt_value(v, key(Scheme.ORE))) for v in vals]


def test_registry_errors():
    r = UdfRegistry()
    r.register_udf("x", software=lambda c: (1, 0.0))
    with pytest.raises(DuplicateUdf):
        r.register_udf("x", tee=lambda: None)
    with pytest.raises(UnregisteredUdf):
        r.get("y")
    with pytest.raises(ValueError):
        r.register_udf("z")


class TestPathEquivalence:
    """Software and enclave forms of every UDF decrypt to the same value."""

    TRIALS = 10_000

    def rnd(self, v):
        return Operand(encrypt_value(v, key(Scheme.RND)), LABEL)

    def test_compare(self, enclave, ore_pool):
        rng = random.Random(1)
        costs = enclave.config.costs
        for _ in range(self.TRIALS):
            (a, ca), (b, cb) = rng.choice(ore_pool), rng.choice(ore_pool)
            op = rng.choice(["<", "<=", ">", ">=", "="])
            sw, _ = U.sw_compare(costs, ca, cb, op)
            t = U.tee_compare(self.rnd(a), self.rnd(b), op)
            enclave.measure(t)
            assert sw == t.value

    def test_cmp3(self, enclave, ore_pool):
        rng = random.Random(2)
        for _ in range(self.TRIALS):
            (a, ca), (b, cb) = rng.choice(ore_pool), rng.choice(ore_pool)
            t = U.tee_cmp3(self.rnd(a), self.rnd(b))
            enclave.measure(t)
            assert U.sw_cmp3(enclave.config.costs, ca, cb)[0] == t.value == (a > b) - (a < b)

    def test_eq(self, enclave):
        rng = random.Random(3)
        for _ in range(self.TRIALS):
            a = rng.randrange(50)
            b = a if rng.random() < 0.5 else rng.randrange(50)
            sw, _ = U.sw_eq(enclave.config.costs, encrypt_value(a, key(Scheme.DET)),
                            encrypt_value(b, key(Scheme.DET)))
            t = U.tee_eq(self.rnd(a), self.rnd(b))
            enclave.measure(t)
            assert sw == t.value

    @pytest.mark.parametrize("kind", ["add", "mul"])
    def test_arith(self, enclave, kind):
        rng = random.Random(4)
        he = Scheme.AHE if kind == "add" else Scheme.MHE
        sw_fn, tee_fn = (U.sw_add, U.tee_add) if kind == "add" else (U.sw_mul, U.tee_mul)
        for _ in range(self.TRIALS):
            a, b = rng.randrange(-2**30, 2**30), rng.randrange(-2**30, 2**30)
            if kind == "mul":
                a, b = a >> 12, b >> 12
            sw, _ = sw_fn(enclave.config.costs, encrypt_value(a, key(he)), encrypt_value(b, key(he)))
            t = tee_fn(self.rnd(a), self.rnd(b), ResultTag.RND, LABEL)
            enclave.measure(t)
            assert decrypt_value(sw, key(he)) == decrypt_value(t.value, key(Scheme.RND))

    def test_sum(self, enclave):
        rng = random.Random(5)
        zero = encrypt_value(0, key(Scheme.AHE))
        for _ in range(self.TRIALS // 10):
            vals = [rng.randrange(-10**6, 10**6) for _ in range(rng.randrange(1, 12))]
            sw, _ = U.sw_sum(enclave.config.costs, [encrypt_value(v, key(Scheme.AHE)) for v in vals], zero)
            t = U.tee_sum([self.rnd(v) for v in vals], LABEL)
            enclave.measure(t)
            assert decrypt_value(sw, key(Scheme.AHE)) == decrypt_value(t.value, key(Scheme.AHE)) == sum(vals)

    @pytest.mark.parametrize("kind", ["min", "max"])
    def test_extremes(self, enclave, ore_pool, kind):
        rng = random.Random(6)
        sw_fn, tee_fn = (U.sw_min, U.tee_min) if kind == "min" else (U.sw_max, U.tee_max)
        for _ in range(self.TRIALS // 10):
            picks = [rng.choice(ore_pool) for _ in range(rng.randrange(1, 10))]
            dets = [encrypt_value(v, key(Scheme.DET)) for v, _ in picks]
            sw, _ = sw_fn(enclave.config.costs, [c for _, c in picks], dets)
            t = tee_fn([self.rnd(v) for v, _ in picks])
            enclave.measure(t)
            want = (min if kind == "min" else max)(v for v, _ in picks)
            assert decrypt_value(sw, key(Scheme.DET)) == decrypt_value(t.value, key(Scheme.RND)) == want


# -- storage ----------------------------------------------------------------------------------

def small_client(mode=Mode.SOFTWARE):
    c = Client(MASTER, mode, seed=7)
    c.register_table("t", [ColumnSpec("k"), ColumnSpec("v"), ColumnSpec("tag", sensitive=False)])
    return c


class TestStorage:
    def test_insert_scan_and_index(self):
        c = small_client()
        s = c.table("t")
        t = EncryptedTable(s.layout)
        ore = f"{s.column('k').anon_name}_ore"
        t.create_index(ore)
        for i in range(40):
            assert t.insert(c.encrypt_row("t", [i, i * 2, i % 3])) == i
        assert len(t) == 40
        lo = encrypt_value(10, c.key(s.label(s.column("k")), Scheme.ORE))
        hi = encrypt_value(14, c.key(s.label(s.column("k")), Scheme.ORE))
        got = sorted(t.indexes[s.layout.position(ore)].range_scan(lo, hi))
        assert got == [10, 11, 12, 13, 14]
        t.indexes[s.layout.position(ore)].check_invariants()

    def test_rejects_bad_rows(self):
        c = small_client()
        s = c.table("t")
        t = EncryptedTable(s.layout)
        row = list(c.encrypt_row("t", [1, 2, 3]))
        with pytest.raises(RowRejected):
            t.insert(row[:-1])
        with pytest.raises(RowRejected):
            t.insert([row[1]] + row[1:])
        blobs = [v if isinstance(v, int) else v.to_bytes() for v in row]
        assert t.insert_wire(blobs) == 0
        blobs[0] = blobs[0][:-3]
        with pytest.raises(MalformedCiphertext):
            t.insert_wire(blobs)
        with pytest.raises(RowRejected):
            t.insert_wire([1] + blobs[1:])

    def test_persistence(self, tmp_path):
        c = small_client()
        s = c.table("t")
        db = Database(tmp_path)
        t = db.create_table(s.layout)
        t.create_index(f"{s.column('v').anon_name}_ore")
        for i in range(25):
            t.insert(c.encrypt_row("t", [i, 100 - i, i]))
        t.update(3, {0: c.encrypt_row("t", [99, 0, 0])[0]})
        db.save()
        db.close()
        db2 = Database.open(tmp_path)
        t2 = db2.table(s.anon_name)
        assert len(t2) == 25 and t2.data_bytes() == t.data_bytes()
        assert [r[-1] for r in t2.rows] == list(range(25))
        assert list(t2.indexes) == list(t.indexes)
        pos = next(iter(t2.indexes))
        assert list(t2.indexes[pos].range_scan()) == list(t.indexes[pos].range_scan())
        t2.insert(c.encrypt_row("t", [0, 0, 77]))
        db2.save()
        db2.close()
        assert len(Database.open(tmp_path).table(s.anon_name)) == 26


# -- planner ----------------------------------------------------------------------------------

class TestPlanner:
    def setup_method(self):
        self.c = small_client()
        self.s = self.c.table("t")
        self.t = EncryptedTable(self.s.layout)
        for i in range(10):
            self.t.insert(self.c.encrypt_row("t", [i, i, i]))

    def test_index_scan_when_indexed(self):
        rq = self.c.rewrite("SELECT v FROM t WHERE k >= 2 AND k < 5")
        assert plan_query(rq, self.t).index is None
        assert plan_query(rq, self.t).root.chain()[0].op == "scan"
        self.t.create_index(f"{self.s.column('k').anon_name}_ore")
        plan = plan_query(rq, self.t)
        assert plan.index is not None and plan.root.chain()[0].op == "index_scan"
        assert plan.filters == [] and plan.index.low_inclusive and not plan.index.high_inclusive

    def test_det_before_ore(self):
        rq = self.c.rewrite("SELECT v FROM t WHERE v > 3 AND tag < 9 AND k = 4")
        plan = plan_query(rq, self.t)
        ops = [(p.col.column, p.op) for p in plan.filters]
        assert ops == [(self.s.column("tag").anon_name, "<"), (self.s.column("k").anon_name, "="),
                       (self.s.column("v").anon_name, ">")]

    def test_filter_costs_nondecreasing(self):
        rng = random.Random(9)
        ad = Client(MASTER, Mode.ADAPTIVE, seed=1)
        ad.register_table("t", [ColumnSpec("k"), ColumnSpec("v"), ColumnSpec("tag", sensitive=False)])
        clients = [self.c, ad, small_client(Mode.STATIC_TEE)]
        for _ in range(60):
            conds = []
            for _ in range(rng.randrange(1, 5)):
                col = rng.choice(["k", "v", "tag"])
                op = rng.choice(["<", ">", "=", ">="])
                arith = f" + {rng.randrange(5)}" if rng.random() < 0.2 else ""
                conds.append(f"{col}{arith} {op} {rng.randrange(10)}")
            c = rng.choice(clients)
            rq = c.rewrite("SELECT tag FROM t WHERE " + " AND ".join(conds))
            t = EncryptedTable(c.table("t").layout)
            costs = [predicate_cost(p, PlanCosts()) for p in plan_query(rq, t).filters]
            assert costs == sorted(costs)

    def test_cost_ordering_constants(self):
        pc = PlanCosts()
        assert pc.plain < pc.det < pc.he < pc.ore < pc.tee < pc.round_trip


# -- execution --------------------------------------------------------------------------------

def make(mode, rows, specs, indexes=("k",), **kw):
    d = deploy(mode, MASTER, seed=11, **kw)
    d.create_table("t", specs, indexes=indexes)
    d.load("t", rows)
    return d


@pytest.mark.parametrize("mode", [Mode.SOFTWARE, Mode.STATIC_TEE, Mode.STATIC_TEE_POOL])
def test_sum_of_hundred_ones(mode):
    d = make(mode, [[i, 1] for i in range(100)], [ColumnSpec("k"), ColumnSpec("v")])
    assert d.query("SELECT SUM(v) FROM t") == [(100,)]
    assert d.query("SELECT SUM(v), COUNT(*) FROM t WHERE k < 0") == [(None, 0)]


def test_order_by_desc_ties_by_row():
    rows = [[i, v] for i, v in enumerate([3, 1, 3, 2, 1, 3])]
    specs = [ColumnSpec("k"), ColumnSpec("v")]
    want = make(Mode.PLAINTEXT, rows, specs).query("SELECT k, v FROM t ORDER BY v DESC")
    assert want == [(0, 3), (2, 3), (5, 3), (3, 2), (1, 1), (4, 1)]
    for mode in (Mode.SOFTWARE, Mode.STATIC_TEE):
        assert make(mode, rows, specs).query("SELECT k, v FROM t ORDER BY v DESC") == want
        assert make(mode, rows, specs).query("SELECT k FROM t ORDER BY v LIMIT 2") == [(1,), (4,)]


def test_metrics_record_every_group(tmp_path):
    d = make(Mode.STATIC_TEE, [[i, i] for i in range(20)], [ColumnSpec("k"), ColumnSpec("v")])
    d.query("SELECT k FROM t WHERE v > 4")
    recs = [r for r in d.rt.metrics.records() if r.kind == "compare"]
    assert len(recs) == 1 and recs[0].path == "tee" and recs[0].calls == 20 and recs[0].entries == 20
    out = tmp_path / "m.csv"
    d.rt.metrics.to_csv(out)
    assert out.read_text().splitlines()[0] == "timestamp,session,kind,path,micros,calls,entries"


def test_pool_cuts_entries():
    rows = [[i, i] for i in range(100)]
    specs = [ColumnSpec("k"), ColumnSpec("v")]
    direct = make(Mode.STATIC_TEE, rows, specs)
    pooled = make(Mode.STATIC_TEE_POOL, rows, specs)
    _, t_direct = direct.run("SELECT k FROM t WHERE v >= 50")
    _, t_pool = pooled.run("SELECT k FROM t WHERE v >= 50")
    assert direct.rt.enclave.entries == 100 and pooled.rt.enclave.entries == 4
    assert t_pool < t_direct


def test_dispatcher_changes_timing_not_results():
    rows = [[i, (i * 7) % 13] for i in range(40)]
    specs = [ColumnSpec("k"), ColumnSpec("v")]
    sqls = ["SELECT k FROM t WHERE v > 6", "SELECT MIN(v), MAX(v), SUM(v) FROM t WHERE k >= 3",
            "SELECT v, COUNT(*) FROM t GROUP BY v", "SELECT k FROM t ORDER BY v LIMIT 5"]
    d = make(Mode.ADAPTIVE, rows, specs)
    adaptive = [sorted(d.query(s)) for s in sqls]
    for prefer in (Path.SOFTWARE, Path.TEE):
        d.rt.dispatcher = StaticDispatcher(prefer)
        assert [sorted(d.query(s)) for s in sqls] == adaptive


def test_group_by_in_tee_mode_converts():
    rows = [[i, i % 4] for i in range(20)]
    d = make(Mode.STATIC_TEE, rows, [ColumnSpec("k"), ColumnSpec("v")])
    assert sorted(d.query("SELECT v, COUNT(*), SUM(k) FROM t GROUP BY v")) == \
        [(v, 5, sum(k for k in range(20) if k % 4 == v)) for v in range(4)]
    assert d.rt.metrics.calls("convert", "tee") == 20


def test_arith_update_and_predicate_round_trip():
    specs = [ColumnSpec("k"), ColumnSpec("q", DataKind.DECIMAL, scale=1)]
    rows = [[i, Decimal(i) / 2] for i in range(10)]
    results = {}
    for mode in MODES:
        d = make(mode, rows, specs)
        d.query("UPDATE t SET q = q + 2.5 WHERE k >= 7")
        results[mode] = sorted(d.query("SELECT k, q FROM t WHERE q + 1 > 6"))
        if mode is Mode.SOFTWARE:
            assert d.rt.metrics.calls("client") == 2
    assert len({tuple(v) for v in results.values()}) == 1
    assert results[Mode.PLAINTEXT] == [(7, Decimal("6.0")), (8, Decimal("6.5")), (9, Decimal("7.0"))]


@pytest.fixture(scope="module")
def transparency_deployments():
    rng = random.Random(21)
    specs = [ColumnSpec("id"), ColumnSpec("a"), ColumnSpec("b", DataKind.DECIMAL, scale=2),
             ColumnSpec("g", sensitive=False), ColumnSpec("s", DataKind.TEXT)]
    rows = [[i, rng.randrange(-50, 50), Decimal(rng.randrange(10000)) / 100, rng.randrange(4),
             rng.choice(["ab", "cd", "ef"])] for i in range(60)]
    return {m: make(m, rows, specs, indexes=("id", "a")) for m in MODES}


def test_transparency_random_queries(transparency_deployments):
    rng = random.Random(22)
    deps = transparency_deployments
    for n in range(40):
        col = rng.choice(["a", "b", "id"])
        lo = rng.randrange(-40, 40)
        shape = n % 5
        if shape == 0:
            sql = f"SELECT id, a, s FROM t WHERE {col} >= {lo} AND {col} < {lo + rng.randrange(1, 30)}"
        elif shape == 1:
            sql = f"SELECT SUM(b), MIN(a), MAX(b), COUNT(*) FROM t WHERE a > {lo}"
        elif shape == 2:
            sql = f"SELECT g, SUM(a), COUNT(*) FROM t WHERE id < {abs(lo) + 10} GROUP BY g"
        elif shape == 3:
            sql = f"SELECT id FROM t WHERE s = 'cd' AND a <= {lo} ORDER BY a DESC LIMIT 5"
        else:
            sql = f"UPDATE t SET a = a + {rng.randrange(1, 5)} WHERE id = {rng.randrange(60)}"
        got = {m: Counter(d.query(sql)) for m, d in deps.items()}
        assert all(g == got[Mode.PLAINTEXT] for g in got.values()), sql


def test_metrics_sink_ring():
    m = MetricsSink(capacity=3)
    for i in range(5):
        m.record(CallRecord(float(i), 0, "compare", "tee", 1.0, 2, 1))
    assert len(m.records()) == 3 and m.dropped == 2
    assert m.calls("compare") == 10 and m.entries() == 5


def test_drive_advances_clock():
    c = small_client()
    db = Database()
    db.create_table(c.table("t").layout)
    rt = Runtime(client=c)
    rs, micros = drive(execute(c.rewrite("INSERT INTO t (k, v, tag) VALUES (1, 2, 3)"), db), rt)
    assert rs.affected == 1 and rt.clock.now == pytest.approx(micros) and micros > 0
