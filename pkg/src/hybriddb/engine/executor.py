"""Generator-based execution of rewritten SELECT / INSERT / UPDATE statements.

``execute`` yields :class:`~hybriddb.engine.work.Work` items and receives
their results; the driver decides which path each item takes and how long it
took. The executor itself never looks at plaintext: every comparison, sum or
re-encryption goes through a UDF group, a client round trip or the index.
"""
from __future__ import annotations

from ..crypto import Scheme
from ..enclave.bridge import SYMBOL_OPS, Operand, ResultTag
from ..rewriter import (PLAIN, ColRef, RAgg, RInsert, RoundTrip, RPred, RSelect, ResultColumn,
                        ResultSet, RUpdate, RewrittenQuery)
from .planner import PlanCosts, plan_query
from .storage import Database, EncryptedTable
from .work import CallGroup, ClientTrip, IndexScanWork, LockRows, PlainWork, SortWork


class QueryError(ValueError):
    pass


def _rnd(col: ColRef, row) -> Operand:
    return Operand(row[col.fields["rnd"]], col.label, col.is_text)


def _lit(col: ColRef, cipher) -> Operand:
    return Operand(cipher, col.label, col.is_text)


def execute(rq: RewrittenQuery, db: Database, plan_costs: PlanCosts | None = None):
    table = db.table(rq.table)
    costs_hint = plan_costs or PlanCosts()
    if rq.client_micros:
        yield PlainWork(lambda c: (None, rq.client_micros), kind="client_encrypt")
    if isinstance(rq, RInsert):
        return (yield from _insert(rq, table))
    if isinstance(rq, RUpdate):
        return (yield from _update(rq, table, costs_hint))
    return (yield from _select(rq, table, costs_hint))


# -- row location ------------------------------------------------------------------------

def _locate(q, table: EncryptedTable, pc: PlanCosts):
    plan = plan_query(q, table, pc)
    if plan.index is not None:
        r = plan.index
        ids = yield IndexScanWork(table, r.pos, r.low, r.high, r.low_inclusive, r.high_inclusive)
    else:
        def scan(c):
            n = len(table)
            return list(range(n)), n * c.row_fetch
        ids = yield PlainWork(scan, kind="scan")
    for p in plan.filters:
        if not ids:
            break
        ids = yield from _filter(table, p, ids)
    return ids


def _filter(table: EncryptedTable, p: RPred, ids: list[int]):
    rows, col = table.rows, p.col
    if col.plain:
        f, lit = col.fields[PLAIN], p.literals[PLAIN]
        cmp = SYMBOL_OPS[p.op]
        if p.arith:
            arith, add = SYMBOL_OPS[p.arith], p.addend[PLAIN]

            def test(v):
                return cmp(arith(v, add), lit)
        else:
            def test(v):
                return cmp(v, lit)

        def run(c):
            return [i for i in ids if rows[i][f] is not None and test(rows[i][f])], c.plain_op * len(ids)
        return (yield PlainWork(run, kind="plain_filter"))
    if p.arith:
        flags = yield from _arith_filter(p, rows, ids)
    else:
        sw = None
        if p.op == "=" and col.has("det") and "det" in p.literals:
            pos, lit = col.fields["det"], p.literals["det"]
            sw = ("eq", [(rows[i][pos], lit) for i in ids])
        elif col.has("ore") and "ore" in p.literals:
            pos, lit = col.fields["ore"], p.literals["ore"]
            sw = ("compare", [(rows[i][pos], lit, p.op) for i in ids])
        tee = None
        if col.has("rnd") and "rnd" in p.literals:
            lit = _lit(col, p.literals["rnd"])
            tee = ("compare", [(_rnd(col, rows[i]), lit, p.op) for i in ids])
        if sw is None and tee is None:
            raise QueryError(f"no usable encoding for predicate {p.op} on {col.column}")
        flags = yield CallGroup("eq" if p.op == "=" else "compare", sw, tee)
    return [i for i, ok in zip(ids, flags) if ok]


def _arith_filter(p: RPred, rows, ids):
    col = p.col
    if col.has("rnd") and "rnd" in p.literals:
        x, bound = _lit(col, p.addend["rnd"]), _lit(col, p.literals["rnd"])
        tee = ("arith_cmp", [(_rnd(col, rows[i]), x, bound, p.arith, p.op) for i in ids])
        return (yield CallGroup("arith_cmp", None, tee))
    he = "ahe" if p.arith == "+" else "mhe"
    if not (col.has(he) and he in p.addend and "ore" in p.literals):
        raise QueryError(f"arithmetic predicate on {col.column} has no usable encoding")
    udf = "add" if p.arith == "+" else "mul"
    pos, addend = col.fields[he], p.addend[he]
    vals = yield CallGroup(udf, (udf, [(rows[i][pos], addend) for i in ids]), scheme=he)
    encs = yield ClientTrip(RoundTrip(col, vals, (Scheme.ORE,)))
    lit = p.literals["ore"]
    return (yield CallGroup("compare", ("compare", [(e["ore"], lit, p.op) for e in encs])))


# -- SELECT --------------------------------------------------------------------------------

def _select(q: RSelect, table: EncryptedTable, pc: PlanCosts):
    ids = yield from _locate(q, table, pc)
    rows = table.rows
    has_agg = any(isinstance(it, RAgg) for it in q.items)
    columns = [ResultColumn(table.name, it.col.column if it.col else "", it.func)
               if isinstance(it, RAgg) else ResultColumn(table.name, it.column)
               for it in q.items]
    if q.group_by is not None:
        out = yield from _grouped(q, table, ids)
    elif has_agg:
        vals = []
        for it in q.items:
            if not isinstance(it, RAgg):
                raise QueryError(f"column {it.column} must appear in GROUP BY or an aggregate")
            vals.append((yield from _aggregate(table, it, ids, whole=not q.preds)))
        out = [tuple(vals)]
    else:
        if q.order_by is not None:
            ids = yield from _sort(table, q.order_by, ids, q.desc)
        if q.limit is not None:
            ids = ids[:q.limit]
        positions = [it.fields[it.retrieval()] for it in q.items]

        def project(c):
            return [tuple(rows[i][p] for p in positions) for i in ids], c.row_fetch * len(ids)
        out = yield PlainWork(project, kind="project")
    if q.group_by is not None or has_agg:
        if q.limit is not None:
            out = out[:q.limit]
    return ResultSet(columns, out)


def _sort(table: EncryptedTable, col: ColRef, ids: list[int], desc: bool):
    rows = table.rows
    if col.plain:
        f = col.fields[PLAIN]

        def run(c):
            asc = sorted(ids)
            out = sorted(asc, key=lambda i: rows[i][f], reverse=desc)
            n = len(ids)
            return out, c.plain_op * n * max(1, n.bit_length())
        # reverse=True keeps equal keys in their original (row id) order
        return (yield PlainWork(run, kind="sort"))
    sw = {i: rows[i][col.fields["ore"]] for i in ids} if col.has("ore") else None
    tee = {i: _rnd(col, rows[i]) for i in ids} if col.has("rnd") else None
    if sw is None and tee is None:
        raise QueryError(f"ORDER BY {col.column} has no order-capable encoding")
    return (yield SortWork(list(ids), sw, tee, desc))


def _group_keys(table: EncryptedTable, g: ColRef, ids: list[int]):
    """Hashable grouping key and output value per row."""
    rows = table.rows
    if g.plain or g.has("det"):
        pos = g.fields[PLAIN] if g.plain else g.fields["det"]

        def run(c):
            vals = [rows[i][pos] for i in ids]
            keys = vals if g.plain else [v.data for v in vals]
            return list(zip(keys, vals)), c.plain_op * len(ids)
        return (yield PlainWork(run, kind="group"))
    if not g.has("rnd"):
        raise QueryError(f"GROUP BY {g.column} needs a deterministic or enclave encoding")
    dets = yield CallGroup("convert", None,
                           ("convert", [(_rnd(g, rows[i]), ResultTag.DET) for i in ids]),
                           scheme="det")
    return [(d.data, d) for d in dets]


def _grouped(q: RSelect, table: EncryptedTable, ids: list[int]):
    g = q.group_by
    keyed = yield from _group_keys(table, g, ids)
    groups: dict = {}
    for i, (k, v) in zip(ids, keyed):
        groups.setdefault(k, (v, []))[1].append(i)
    out = []
    for out_val, gids in groups.values():
        row = []
        for it in q.items:
            if isinstance(it, RAgg):
                row.append((yield from _aggregate(table, it, gids, whole=False)))
            elif it.column == g.column:
                row.append(out_val)
            else:
                raise QueryError(f"column {it.column} must appear in GROUP BY or an aggregate")
        out.append(tuple(row))
    return out


def _aggregate(table: EncryptedTable, agg: RAgg, ids: list[int], whole: bool):
    if agg.func == "COUNT":
        return len(ids)
    if not ids:
        return None
    rows, col = table.rows, agg.col
    if col.plain:
        f = col.fields[PLAIN]
        fn = {"SUM": sum, "MIN": min, "MAX": max}[agg.func]
        return (yield PlainWork(lambda c: (fn(rows[i][f] for i in ids), c.plain_op * len(ids)),
                                kind="plain_agg"))
    tee = None
    if agg.func == "SUM":
        sw = None
        if col.has("ahe") and agg.zero is not None:
            pos = col.fields["ahe"]
            sw = ("sum", [([rows[i][pos] for i in ids], agg.zero)])
        if col.has("rnd"):
            tee = ("sum", [([_rnd(col, rows[i]) for i in ids], col.label)])
        if sw is None and tee is None:
            raise QueryError(f"SUM over {col.column} has no usable encoding")
        res = yield CallGroup("sum", sw, tee, scheme="ahe", weight=len(ids))
        return res[0]
    kind = agg.func.lower()
    if col.has("ore"):
        pos = col.fields["ore"]
        out_pos = col.fields[col.retrieval()]
        if whole and pos in table.indexes:
            return (yield from _index_extreme(table, pos, out_pos, kind))
        sw = (kind, [([rows[i][pos] for i in ids], [rows[i][out_pos] for i in ids])])
    else:
        sw = None
    if col.has("rnd"):
        tee = (kind, [([_rnd(col, rows[i]) for i in ids],)])
    if sw is None and tee is None:
        raise QueryError(f"{agg.func} over {col.column} has no order-capable encoding")
    res = yield CallGroup(kind, sw, tee, scheme="rnd", weight=len(ids))
    return res[0]


def _index_extreme(table: EncryptedTable, pos: int, out_pos: int, kind: str):
    def run(c):
        tree = table.indexes[pos]
        table.cmp.take()
        k = tree.min_key() if kind == "min" else tree.max_key()
        return table.rows[k.row_id][out_pos], table.cmp.take() * c.ore_compare + c.row_fetch
    return (yield PlainWork(run, kind="index_extreme"))


# -- INSERT / UPDATE ---------------------------------------------------------------------

def _insert(q: RInsert, table: EncryptedTable):
    def run(c):
        table.cmp.take()
        rid = table.insert(q.row)
        return rid, c.row_fetch + table.cmp.take() * c.ore_compare
    yield PlainWork(run, kind="write")
    return ResultSet([], [], affected=1)


def _stored_schemes(col: ColRef) -> list[str]:
    return [k for k in col.fields if k != PLAIN]


def _update(q: RUpdate, table: EncryptedTable, pc: PlanCosts):
    ids = yield from _locate(q, table, pc)
    if not ids:
        return ResultSet([], [], affected=0)
    yield LockRows(frozenset((table.name, i) for i in ids))
    rows = table.rows
    writes: dict[int, dict[int, object]] = {i: {} for i in ids}
    plain_arith = []
    for s in q.sets:
        col = s.col
        if s.arith is None:
            for i in ids:
                for enc, v in s.values.items():
                    writes[i][col.fields[enc]] = v
            continue
        if col.plain:
            plain_arith.append((col.fields[PLAIN], SYMBOL_OPS[s.arith], s.addend[PLAIN]))
            continue
        udf = "add" if s.arith == "+" else "mul"
        if col.has("rnd") and "rnd" in s.addend:
            tags = tuple(ResultTag(k) for k in _stored_schemes(col))
            x = _lit(col, s.addend["rnd"])
            res = yield CallGroup(udf, None,
                                  (udf, [(_rnd(col, rows[i]), x, tags, col.label) for i in ids]),
                                  scheme="rnd")
            for i, r in zip(ids, res):
                for tag, c in r.items():
                    writes[i][col.fields[tag.value]] = c
            continue
        he = "ahe" if s.arith == "+" else "mhe"
        if not (col.has(he) and he in s.addend):
            raise QueryError(f"SET {col.column} {s.arith} has no usable encoding")
        pos, addend = col.fields[he], s.addend[he]
        vals = yield CallGroup(udf, (udf, [(rows[i][pos], addend) for i in ids]), scheme=he)
        want = tuple(Scheme(k) for k in _stored_schemes(col))
        encs = yield ClientTrip(RoundTrip(col, vals, want))
        for i, e in zip(ids, encs):
            for k, c in e.items():
                writes[i][col.fields[k]] = c

    def run(c):
        table.cmp.take()
        for i in ids:
            w = writes[i]
            for f, op, add in plain_arith:
                w[f] = op(rows[i][f], add)
            table.update(i, w)
        return len(ids), c.row_fetch * len(ids) + table.cmp.take() * c.ore_compare
    n = yield PlainWork(run, kind="write")
    return ResultSet([], [], affected=n)
