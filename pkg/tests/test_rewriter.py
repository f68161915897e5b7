import json
import random
from decimal import Decimal

import pytest

from hybriddb.crypto import AheCipher, DetCipher, MasterKey, MheCipher, OreCipher, RndCipher, Scheme
from hybriddb.query import Agg, Cond, Insert, Select, SqlError, Update, parse
from hybriddb.rewriter import (Capability, Client, Keystore, ResultColumn, ResultSet, SchemeMissing,
                               UnknownColumn, to_wire)
from hybriddb.schema import ColumnSpec, DataKind, Mode

MASTER = MasterKey(bytes(range(32)))

SPECS = [ColumnSpec("account"), ColumnSpec("balance", DataKind.DECIMAL, scale=2),
         ColumnSpec("owner", DataKind.TEXT), ColumnSpec("branch", sensitive=False)]


def client(mode=Mode.SOFTWARE, seed=1):
    c = Client(MASTER, mode, seed=seed)
    c.register_table("accounts", SPECS)
    return c


class TestParser:
    def test_select_full(self):
        q = parse("SELECT a, SUM(b) FROM t WHERE a >= 3 AND b < :hi GROUP BY a "
                  "ORDER BY a DESC LIMIT 5", {"hi": 9})
        assert q == Select("t", ["a", Agg("SUM", "b")], [Cond("a", ">=", 3), Cond("b", "<", 9)],
                           "a", "a", True, 5)

    def test_arith_predicate_and_decimal(self):
        q = parse("SELECT * FROM t WHERE a + 2.50 > 7")
        assert q.where == [Cond("a", ">", 7, ("+", Decimal("2.50")))]

    def test_insert_update(self):
        assert parse("INSERT INTO t (a, b) VALUES (1, 'x''y')") == Insert("t", ["a", "b"], [1, "x'y"])
        u = parse("UPDATE t SET a = a + 1, b = 'z' WHERE c = 2")
        assert isinstance(u, Update) and u.sets[0].arith == "+" and u.sets[1].value == "z"

    @pytest.mark.parametrize("sql", ["DELETE FROM t", "SELECT FROM t", "SELECT a FROM t WHERE",
                                     "UPDATE t SET a = b + 1", "SELECT a FROM t :x",
                                     "SELECT a FROM t WHERE a = :missing", "SELECT MIN(*) FROM t"])
    def test_rejects(self, sql):
        with pytest.raises(SqlError):
            parse(sql)


class TestRegistration:
    def test_anon_names_distinct(self):
        t = client().table("accounts")
        names = [c.anon_name for c in t.columns] + [t.anon_name]
        assert len(set(names)) == len(names)
        assert all(len(n) == 16 and int(n, 16) >= 0 for n in names)

    def test_scheme_defaults(self):
        t = client().table("accounts")
        assert t.column("balance").schemes == {Scheme.AHE, Scheme.MHE, Scheme.ORE, Scheme.DET}
        assert t.column("owner").schemes == {Scheme.ORE, Scheme.DET}
        assert t.column("branch").schemes == frozenset()
        tee = client(Mode.STATIC_TEE).table("accounts")
        assert tee.column("balance").schemes == {Scheme.RND}
        ad = client(Mode.ADAPTIVE).table("accounts")
        assert Scheme.RND in ad.column("account").schemes and Scheme.ORE in ad.column("account").schemes

    def test_layout_field_counts(self):
        sw = client().table("accounts")
        assert len(sw.layout.column_fields(sw.column("account").anon_name)) == 4
        tee = client(Mode.STATIC_TEE).table("accounts")
        assert len(tee.layout.column_fields(tee.column("account").anon_name)) == 1

    def test_duplicates_rejected(self):
        c = client()
        with pytest.raises(ValueError):
            c.register_table("accounts", SPECS)
        with pytest.raises(ValueError):
            c.register_table("x", [ColumnSpec("a"), ColumnSpec("a")])

    def test_text_cannot_be_homomorphic(self):
        c = Client(MASTER, Mode.SOFTWARE)
        with pytest.raises(ValueError):
            c.register_table("x", [ColumnSpec("t", DataKind.TEXT, schemes=frozenset({Scheme.AHE}))])


class TestEncryptRow:
    def test_field_types(self):
        c = client()
        t = c.table("accounts")
        row = c.encrypt_row("accounts", [42, Decimal("10.50"), "ann", 3])
        assert len(row) == len(t.layout.fields)
        kinds = {f.scheme: type(v) for f, v in zip(t.layout.fields, row)
                 if f.column == t.column("account").anon_name}
        assert kinds == {Scheme.AHE: AheCipher, Scheme.MHE: MheCipher,
                         Scheme.ORE: OreCipher, Scheme.DET: DetCipher}
        assert 3 in row

    def test_det_equal_others_fresh(self):
        c = client()
        t = c.table("accounts")
        a = c.encrypt_row("accounts", [7, 1, "x", 0])
        b = c.encrypt_row("accounts", [7, 1, "x", 0])
        for f, x, y in zip(t.layout.fields, a, b):
            if f.scheme is Scheme.DET or f.scheme is None:
                assert x == y
            else:
                assert x != y

    def test_tee_row_is_rnd_only(self):
        c = client(Mode.STATIC_TEE)
        row = c.encrypt_row("accounts", {"account": 1, "balance": 2, "owner": "o", "branch": 4})
        assert [type(v) for v in row] == [RndCipher, RndCipher, RndCipher, int]

    def test_type_and_precision_checks(self):
        c = client()
        with pytest.raises(TypeError):
            c.encrypt_row("accounts", ["no", 1, "x", 0])
        with pytest.raises(ValueError):
            c.encrypt_row("accounts", [1, Decimal("1.234"), "x", 0])
        with pytest.raises(ValueError):
            c.encrypt_row("accounts", [1, 1, "x"])


class TestRewrite:
    def test_software_range_uses_ore(self):
        rq = client().rewrite("SELECT account FROM accounts WHERE balance > 10")
        p = rq.preds[0]
        assert set(p.literals) == {"ore"} and p.capabilities == {Capability.ORE_COMPARE}
        assert isinstance(p.literals["ore"], OreCipher)

    def test_software_equality_carries_det(self):
        p = client().rewrite("SELECT account FROM accounts WHERE account = 5").preds[0]
        assert Capability.DET_EQUAL in p.capabilities and "det" in p.literals

    def test_tee_range_uses_rnd(self):
        p = client(Mode.STATIC_TEE).rewrite("SELECT account FROM accounts WHERE balance > 10").preds[0]
        assert set(p.literals) == {"rnd"} and p.capabilities == {Capability.TEE_BRIDGE}

    def test_adaptive_carries_both(self):
        p = client(Mode.ADAPTIVE).rewrite("SELECT account FROM accounts WHERE balance > 10").preds[0]
        assert {"ore", "rnd"} <= set(p.literals)
        assert {Capability.ORE_COMPARE, Capability.TEE_BRIDGE} <= p.capabilities

    def test_arith_predicate_needs_round_trip_in_software(self):
        p = client().rewrite("SELECT account FROM accounts WHERE balance + 1 > 10").preds[0]
        assert {Capability.HE_ADD, Capability.CLIENT_ROUND_TRIP} <= p.capabilities
        assert isinstance(p.addend["ahe"], AheCipher)

    def test_sum_gets_ahe_zero(self):
        rq = client().rewrite("SELECT SUM(balance) FROM accounts")
        assert isinstance(rq.items[0].zero, AheCipher)

    def test_missing_scheme(self):
        c = Client(MASTER, Mode.SOFTWARE)
        c.register_table("x", [ColumnSpec("a", schemes=frozenset({Scheme.DET}))])
        with pytest.raises(SchemeMissing):
            c.rewrite("SELECT a FROM x WHERE a > 1")
        with pytest.raises(SchemeMissing):
            c.rewrite("SELECT SUM(a) FROM x")

    def test_unknown_column(self):
        with pytest.raises(KeyError):
            client().rewrite("SELECT nope FROM accounts")

    @pytest.mark.parametrize("mode", [Mode.SOFTWARE, Mode.STATIC_TEE, Mode.ADAPTIVE])
    def test_no_leak(self, mode):
        rng = random.Random(5)
        c = client(mode)
        for _ in range(50):
            v = rng.randrange(10**6, 10**7)
            name = f"secret{rng.randrange(10**6)}"
            for sql in (f"SELECT account, owner FROM accounts WHERE balance >= {v} AND owner = '{name}'",
                        f"UPDATE accounts SET balance = balance + {v} WHERE account = {v + 1}",
                        f"INSERT INTO accounts (account, balance, owner, branch) VALUES ({v}, 1, '{name}', 2)",
                        f"SELECT SUM(balance) FROM accounts WHERE account + {v} < 3"):
                wire = to_wire(c.rewrite(sql))
                json.loads(wire)
                assert str(v) not in wire and name not in wire
                for plain in ("accounts", "account", "balance", "owner"):
                    assert plain not in wire

    def test_client_micros_charged(self):
        rq = client().rewrite("SELECT account FROM accounts WHERE balance > 10")
        assert rq.client_micros == pytest.approx(55.0)


class TestDecrypt:
    def test_round_trip_and_unknown(self):
        c = client()
        t = c.table("accounts")
        bal = t.column("balance")
        ct = c._enc(t, bal, Scheme.DET, bal.encode(Decimal("12.34")))
        rs = ResultSet([ResultColumn(t.anon_name, bal.anon_name)], [(ct,)])
        assert c.decrypt_results(rs) == [(Decimal("12.34"),)]
        bad = ResultSet([ResultColumn(t.anon_name, "f" * 16)], [(ct,)])
        with pytest.raises(UnknownColumn):
            c.decrypt_results(bad)

    def test_sensitive_plaintext_rejected(self):
        c = client()
        t = c.table("accounts")
        rs = ResultSet([ResultColumn(t.anon_name, t.column("account").anon_name)], [(5,)])
        with pytest.raises(TypeError):
            c.decrypt_results(rs)


def test_catalog_round_trip(tmp_path):
    c = client()
    path = tmp_path / "catalog.json"
    c.save_catalog(path)
    text = path.read_text()
    assert MASTER.secret.hex() not in text
    d = Client.load_catalog(path, MASTER)
    assert d.table("accounts").to_dict() == c.table("accounts").to_dict()
    row = c.encrypt_row("accounts", [1, 2, "z", 3])
    det = [v for f, v in zip(d.table("accounts").layout.fields, row) if f.scheme is Scheme.DET][0]
    assert d.decrypt_value(d.table("accounts"), d.table("accounts").column("account"), det) == 1


def test_keystore(tmp_path):
    p = tmp_path / "keys.bin"
    Keystore.save(p, MASTER, "pw")
    assert Keystore.load(p, "pw").secret == MASTER.secret
    with pytest.raises(ValueError):
        Keystore.load(p, "wrong")
