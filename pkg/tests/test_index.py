import math
import random
import threading

import pytest

from hybriddb.crypto import MasterKey, Scheme, derive_column_key, ore_encrypt
from hybriddb.crypto.ore import LayoutMismatch
from hybriddb.index.btree import (OPERATORS, CipherBTree, EmptyIndex, OreKey, comparator,
                                  ore_max, ore_min)

MASTER = MasterKey(bytes(range(32)))
KEY = derive_column_key(MASTER, "t.c", Scheme.ORE)

_cache: dict[int, object] = {}


def enc(v):
    c = _cache.get(v)
    if c is None:
        c = _cache[v] = ore_encrypt(v, KEY, bits=16)
    return c


def build(values, fanout=8, compare=comparator):
    t = CipherBTree(fanout, compare)
    # decryption oracle: cipher object -> plaintext
    plain = {}
    for rid, v in enumerate(values):
        k = OreKey(enc(v), rid)
        plain[rid] = v
        t.insert(k)
    return t, plain


def test_comparator_signs():
    assert comparator(enc(3), enc(9)) == -1
    assert comparator(enc(9), enc(3)) == 1
    fresh = ore_encrypt(7, KEY, bits=16)
    assert comparator(enc(7), fresh) == 0


def test_comparator_antisymmetric():
    rng = random.Random(1)
    for _ in range(200):
        a, b = rng.randrange(1 << 16), rng.randrange(1 << 16)
        assert comparator(enc(a), enc(b)) == -comparator(enc(b), enc(a))


def test_five_operators():
    for a in (2, 5, 8):
        for b in (2, 5, 8):
            ca, cb = enc(a), enc(b)
            assert OPERATORS["<"](ca, cb) == (a < b)
            assert OPERATORS["<="](ca, cb) == (a <= b)
            assert OPERATORS["="](ca, cb) == (a == b)
            assert OPERATORS[">="](ca, cb) == (a >= b)
            assert OPERATORS[">"](ca, cb) == (a > b)


def test_comparator_layout_mismatch():
    other = ore_encrypt(3, KEY, bits=32)
    with pytest.raises(LayoutMismatch):
        comparator(enc(3), other)


def test_empty_tree_insert_height_one():
    t = CipherBTree()
    assert t.height == 1
    t.insert(OreKey(enc(1), 0))
    assert t.height == 1 and len(t) == 1


def test_odd_or_small_fanout_rejected():
    with pytest.raises(ValueError):
        CipherBTree(7)
    with pytest.raises(ValueError):
        CipherBTree(2)


def test_inorder_sorted_against_sort_oracle():
    rng = random.Random(2)
    vals = [rng.randrange(1 << 16) for _ in range(10_000)]
    t, plain = build(vals, fanout=64)
    got = [plain[k.row_id] for k in t.keys()]
    assert got == sorted(vals)
    t.check_invariants()
    assert t.height <= t.height_bound()


def test_duplicates_ordered_by_row_id():
    t, _ = build([4] * 50 + [1, 9], fanout=4)
    rows = list(t.range_scan(enc(4), enc(4)))
    assert rows == list(range(50))


@pytest.mark.parametrize("fanout", [4, 6, 8, 64])
def test_structure_after_every_batch(fanout):
    rng = random.Random(fanout)
    t = CipherBTree(fanout)
    rid = 0
    for _ in range(10):
        for _ in range(150):
            t.insert(OreKey(enc(rng.randrange(500)), rid))
            rid += 1
        t.check_invariants()
        assert t.height <= math.ceil(math.log(rid, math.ceil(fanout / 2))) + 1


def test_range_closed_open_unbounded():
    t, plain = build(list(range(1, 101)))
    assert len(list(t.range_scan(enc(10), enc(20)))) == 11
    assert len(list(t.range_scan(enc(10), enc(20), False, False))) == 9
    assert list(t.range_scan(enc(50), enc(50), False, False)) == []
    assert [plain[r] for r in t.range_scan()] == list(range(1, 101))
    assert [plain[r] for r in t.range_scan(high=enc(3))] == [1, 2, 3]
    assert [plain[r] for r in t.range_scan(low=enc(98), low_inclusive=False)] == [99, 100]


def test_range_inverted_bounds():
    t, _ = build([1, 2, 3])
    with pytest.raises(ValueError):
        t.range_scan(enc(5), enc(2))


def test_range_matches_bruteforce_filter():
    rng = random.Random(3)
    vals = [rng.randrange(2000) for _ in range(3000)]
    t, plain = build(vals, fanout=16)
    for _ in range(200):
        lo, hi = sorted(rng.randrange(2100) for _ in range(2))
        li, hi_inc = rng.random() < 0.5, rng.random() < 0.5
        want = sorted((v, r) for r, v in enumerate(vals)
                      if (lo <= v if li else lo < v) and (v <= hi if hi_inc else v < hi))
        got = list(t.range_scan(enc(lo), enc(hi), li, hi_inc))
        assert got == [r for _, r in want]


def test_min_max():
    t, plain = build([5, 1, 9])
    assert plain[t.min_key().row_id] == 1 and plain[t.max_key().row_id] == 9
    assert comparator(ore_min(t), enc(1)) == 0
    assert comparator(ore_max(t), enc(9)) == 0
    single, _ = build([42])
    assert comparator(ore_min(single), ore_max(single)) == 0
    with pytest.raises(EmptyIndex):
        ore_min(CipherBTree())


def test_delete_max_then_rebuild():
    t = CipherBTree(4)
    keys = [OreKey(enc(v), i) for i, v in enumerate([5, 1, 9, 7, 3])]
    for k in keys:
        t.insert(k)
    assert t.delete(keys[2])
    assert comparator(ore_max(t), enc(7)) == 0
    assert not t.delete(keys[2])
    r = t.rebuild()
    assert len(r) == 4 and r.key_count == 4
    assert comparator(ore_max(r), enc(7)) == 0
    r.check_invariants()


def test_delete_prefers_identical_object():
    t = CipherBTree(4)
    a, b = OreKey(enc(3), 1), OreKey(enc(3), 1)
    t.insert(a)
    t.insert(b)
    t.delete(b)
    assert [k for k in t.keys()] == [a]


def test_all_deleted_is_empty():
    t = CipherBTree(4)
    k = OreKey(enc(1), 0)
    t.insert(k)
    t.delete(k)
    with pytest.raises(EmptyIndex):
        ore_max(t)


def test_page_file_round_trip(tmp_path):
    vals = list(range(300, 0, -1))
    t = CipherBTree(6)
    keys = [OreKey(enc(v), i) for i, v in enumerate(vals)]
    for k in keys:
        t.insert(k)
    t.delete(keys[0])
    path = tmp_path / "idx.pages"
    t.save(path)
    assert path.read_bytes().startswith(b"HDBIDX")
    u = CipherBTree.load(path)
    assert u.fanout == 6 and u.height == t.height and len(u) == 299
    assert list(u.range_scan(enc(10), enc(12))) == list(t.range_scan(enc(10), enc(12)))
    u.check_invariants()


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        CipherBTree.load(p)


def _trace(values):
    outcomes = []

    def rec(a, b):
        r = comparator(a, b)
        outcomes.append(r)
        return r

    t = CipherBTree(4, rec)
    for i, v in enumerate(values):
        t.insert(OreKey(ore_encrypt(v, KEY, bits=16), i))
    return outcomes


def test_comparator_trace_depends_only_on_order():
    rng = random.Random(9)
    a = rng.sample(range(1000), 200)
    ranks = {v: i for i, v in enumerate(sorted(a))}
    spread = sorted(rng.sample(range(10_000, 60_000), 200))
    b = [spread[ranks[v]] for v in a]
    assert _trace(a) == _trace(b)
    c = list(a)
    c[0], c[1] = c[1], c[0]
    assert _trace(a) != _trace(c)


def test_concurrent_readers_with_writer():
    t, _ = build(list(range(200)), fanout=8)
    errors = []

    def reader():
        try:
            for _ in range(20):
                rows = list(t.range_scan())
                assert rows == sorted(rows)
        except Exception as e:  # pragma: no cover
            errors.append(e)

    def writer():
        for i in range(200, 400):
            t.insert(OreKey(enc(i), i))

    threads = [threading.Thread(target=reader) for _ in range(3)] + [threading.Thread(target=writer)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert not errors
    assert len(t) == 400
    t.check_invariants()
