"""Workload definitions: a TPC-C-like schema, a small synthetic table, and op streams.

Row counts follow one TPC-C warehouse at ``scale=1`` (300k order lines) and
shrink linearly. Every column is sensitive, so in software mode all 93 columns
carry an ORE encoding.
"""
from __future__ import annotations

import enum
import random
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal

from ..schema import ColumnSpec, DataKind

I, D, T = DataKind.INT, DataKind.DECIMAL, DataKind.TEXT

SYNTHETIC_BASE_ROWS = 15_000
#: order ids covered by one range read
RANGE_ORDERS = 5


class WorkloadKind(str, enum.Enum):
    TPCC_LIKE = "tpcc_like"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind = WorkloadKind.TPCC_LIKE
    scale: float = 0.01
    # fraction of operations that are reads
    read_write_ratio: float = 0.5
    concurrency: int = 1
    # operations issued by each session
    ops: int = 20
    # optional virtual-time cutoff; sessions stop starting new operations after it
    duration_micros: float | None = None
    seed: int = 0
    # fraction of reads that are equality lookups (the rest are range scans)
    eq_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", WorkloadKind(self.kind))
        if not 0 <= self.read_write_ratio <= 1:
            raise ValueError("read_write_ratio must be in [0, 1]")
        if not 0 <= self.eq_fraction <= 1:
            raise ValueError("eq_fraction must be in [0, 1]")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.concurrency < 1 or self.ops < 0:
            raise ValueError("concurrency must be >= 1 and ops >= 0")
        if self.duration_micros is not None and self.duration_micros <= 0:
            raise ValueError("duration_micros must be positive")

    def with_(self, **kw) -> "WorkloadSpec":
        d = asdict(self)
        d.update(kw)
        return WorkloadSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown workload fields: {sorted(unknown)}")
        return cls(**d)


# -- schema ------------------------------------------------------------------------------

def _cols(*items) -> list[ColumnSpec]:
    out = []
    for it in items:
        name, kind = it[0], it[1]
        out.append(ColumnSpec(name, kind, scale=it[2] if len(it) > 2 else 0))
    return out


TPCC_TABLES: dict[str, list[ColumnSpec]] = {
    "warehouse": _cols(("w_id", I), ("w_name", T), ("w_street_1", T), ("w_street_2", T),
                       ("w_city", T), ("w_state", T), ("w_zip", T), ("w_tax", D, 4),
                       ("w_ytd", D, 2)),
    "district": _cols(("d_id", I), ("d_w_id", I), ("d_name", T), ("d_street_1", T),
                      ("d_street_2", T), ("d_city", T), ("d_state", T), ("d_zip", T),
                      ("d_tax", D, 4), ("d_ytd", D, 2), ("d_next_o_id", I)),
    "customer": _cols(("c_id", I), ("c_d_id", I), ("c_w_id", I), ("c_first", T), ("c_middle", T),
                      ("c_last", T), ("c_street_1", T), ("c_street_2", T), ("c_city", T),
                      ("c_state", T), ("c_zip", T), ("c_phone", T), ("c_since", I),
                      ("c_credit", T), ("c_credit_lim", D, 2), ("c_discount", D, 4),
                      ("c_balance", D, 2), ("c_ytd_payment", D, 2), ("c_payment_cnt", I),
                      ("c_delivery_cnt", I), ("c_data", T)),
    "history": _cols(("h_c_id", I), ("h_c_d_id", I), ("h_c_w_id", I), ("h_d_id", I),
                     ("h_w_id", I), ("h_date", I), ("h_amount", D, 2), ("h_data", T)),
    "orders": _cols(("o_id", I), ("o_d_id", I), ("o_w_id", I), ("o_c_id", I), ("o_entry_d", I),
                    ("o_carrier_id", I), ("o_ol_cnt", I), ("o_all_local", I), ("o_total", D, 2)),
    "new_orders": _cols(("no_o_id", I), ("no_d_id", I), ("no_w_id", I)),
    "order_line": _cols(("ol_o_id", I), ("ol_d_id", I), ("ol_w_id", I), ("ol_number", I),
                        ("ol_i_id", I), ("ol_supply_w_id", I), ("ol_delivery_d", I),
                        ("ol_quantity", I), ("ol_amount", D, 2), ("ol_dist_info", T)),
    "stock": _cols(("s_i_id", I), ("s_w_id", I), ("s_quantity", I),
                   *[(f"s_dist_{i:02d}", T) for i in range(1, 11)],
                   ("s_ytd", I), ("s_order_cnt", I), ("s_remote_cnt", I), ("s_data", T)),
    "item": _cols(("i_id", I), ("i_im_id", I), ("i_name", T), ("i_price", D, 2), ("i_data", T)),
}

TPCC_INDEXES = {"district": ["d_id"], "customer": ["c_id"], "orders": ["o_id"],
                "order_line": ["ol_o_id"], "stock": ["s_i_id"], "item": ["i_id"]}

SYNTHETIC_TABLES = {"synth": _cols(("k", I), ("v", I))}


def tpcc_row_counts(scale: float) -> dict[str, int]:
    """Per-table cardinalities; district and warehouse do not shrink below one warehouse."""
    def n(base):
        return max(1, round(base * scale))
    orders = n(30_000)
    return {"warehouse": 1, "district": 10, "customer": n(30_000), "history": n(30_000),
            "orders": orders, "new_orders": max(1, round(orders * 0.3)),
            "order_line": orders * 10, "stock": n(100_000), "item": n(100_000)}


def synthetic_rows(scale: float) -> int:
    return max(2, round(SYNTHETIC_BASE_ROWS * scale))


@dataclass
class Dataset:
    """Plaintext tables: name -> (column specs, rows, indexed columns)."""
    kind: WorkloadKind
    tables: dict[str, tuple[list[ColumnSpec], list[tuple], list[str]]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def rows(self, table: str) -> list[tuple]:
        return self.tables[table][1]

    @property
    def column_count(self) -> int:
        return sum(len(specs) for specs, _, _ in self.tables.values())


def _text(rng: random.Random, lo: int, hi: int) -> str:
    n = rng.randint(lo, hi)
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(n))


def _money(rng: random.Random, lo: int, hi: int) -> Decimal:
    return Decimal(rng.randint(lo * 100, hi * 100)).scaleb(-2)


def _tpcc(scale: float, rng: random.Random) -> Dataset:
    c = tpcc_row_counts(scale)
    ds = Dataset(WorkloadKind.TPCC_LIKE, counts=c)
    t, tx = _text, rng
    rows = {"warehouse": [(1, t(tx, 6, 10), t(tx, 10, 20), t(tx, 10, 20), t(tx, 10, 20),
                           t(tx, 2, 2), t(tx, 9, 9), Decimal(rng.randint(0, 2000)).scaleb(-4),
                           Decimal("300000.00"))]}
    rows["district"] = [(d, 1, t(tx, 6, 10), t(tx, 10, 20), t(tx, 10, 20), t(tx, 10, 20),
                         t(tx, 2, 2), t(tx, 9, 9), Decimal(rng.randint(0, 2000)).scaleb(-4),
                         Decimal("30000.00"), c["orders"] + 1) for d in range(1, 11)]
    rows["customer"] = [(i, 1 + i % 10, 1, t(tx, 8, 16), "OE", t(tx, 6, 12), t(tx, 10, 20),
                         t(tx, 10, 20), t(tx, 10, 20), t(tx, 2, 2), t(tx, 9, 9), t(tx, 16, 16),
                         rng.randint(0, 10**6), rng.choice(["GC", "BC"]), Decimal("50000.00"),
                         Decimal(rng.randint(0, 5000)).scaleb(-4), Decimal("-10.00"),
                         Decimal("10.00"), 1, 0, t(tx, 30, 60))
                        for i in range(1, c["customer"] + 1)]
    rows["history"] = [(i, 1 + i % 10, 1, 1 + i % 10, 1, rng.randint(0, 10**6), Decimal("10.00"),
                        t(tx, 12, 24)) for i in range(1, c["history"] + 1)]
    rows["orders"] = [(o, 1 + o % 10, 1, rng.randint(1, c["customer"]), rng.randint(0, 10**6),
                       rng.randint(1, 10), 10, 1, _money(rng, 10, 5000))
                      for o in range(1, c["orders"] + 1)]
    first_new = c["orders"] - c["new_orders"] + 1
    rows["new_orders"] = [(o, 1 + o % 10, 1) for o in range(first_new, c["orders"] + 1)]
    rows["order_line"] = [(o, 1 + o % 10, 1, n, rng.randint(1, c["item"]), 1,
                           rng.randint(0, 10**6), rng.randint(1, 10), _money(rng, 0, 9999),
                           t(tx, 24, 24))
                          for o in range(1, c["orders"] + 1) for n in range(1, 11)]
    rows["stock"] = [(i, 1, rng.randint(10, 100), *[t(tx, 24, 24) for _ in range(10)], 0, 0, 0,
                      t(tx, 26, 50)) for i in range(1, c["stock"] + 1)]
    rows["item"] = [(i, rng.randint(1, 10_000), t(tx, 14, 24), _money(rng, 1, 100),
                     t(tx, 26, 50)) for i in range(1, c["item"] + 1)]
    for name, specs in TPCC_TABLES.items():
        ds.tables[name] = (specs, rows[name], TPCC_INDEXES.get(name, []))
    return ds


def _synthetic(scale: float, rng: random.Random) -> Dataset:
    n = synthetic_rows(scale)
    keys = list(range(n))
    rng.shuffle(keys)
    rows = [(k, rng.randint(0, 10**6)) for k in keys]
    ds = Dataset(WorkloadKind.SYNTHETIC, counts={"synth": n})
    # no index: every range read is a full scan of comparison calls
    ds.tables["synth"] = (SYNTHETIC_TABLES["synth"], rows, [])
    return ds


def generate_dataset(spec: WorkloadSpec) -> Dataset:
    """Seeded plaintext dataset; encrypting it is per-mode (see the runner)."""
    rng = random.Random(f"dataset:{spec.seed}")
    if spec.kind is WorkloadKind.SYNTHETIC:
        return _synthetic(spec.scale, rng)
    return _tpcc(spec.scale, rng)


def dataset_fingerprint(ds: Dataset) -> bytes:
    """Canonical bytes of the plaintext rows; equal seeds give equal bytes."""
    parts = []
    for name in sorted(ds.tables):
        specs, rows, idx = ds.tables[name]
        parts.append(f"{name}|{','.join(c.plain_name for c in specs)}|{','.join(idx)}")
        parts.extend(repr(r) for r in rows)
    return "\n".join(parts).encode()


# -- operation streams ------------------------------------------------------------------------

@dataclass(frozen=True)
class Op:
    kind: str  # read_eq | read_range | write
    statements: tuple[tuple[str, dict], ...]


def _tpcc_op(spec: WorkloadSpec, counts: dict, rng: random.Random, sid: int, j: int) -> Op:
    if rng.random() < spec.read_write_ratio:
        if rng.random() < spec.eq_fraction:
            i = rng.randint(1, counts["stock"])
            return Op("read_eq", (("SELECT s_quantity, s_ytd FROM stock WHERE s_i_id = :i",
                                   {"i": i}),))
        lo = rng.randint(1, max(1, counts["orders"] - RANGE_ORDERS + 1))
        return Op("read_range", (("SELECT ol_i_id, ol_amount FROM order_line "
                                  "WHERE ol_o_id >= :lo AND ol_o_id < :hi AND ol_quantity < :q",
                                  {"lo": lo, "hi": lo + RANGE_ORDERS, "q": rng.randint(3, 10)}),))
    # new-order style: bump the district counter, add a line, adjust stock
    d = rng.randint(1, 10)
    item = rng.randint(1, counts["stock"])
    qty = rng.randint(1, 10)
    o_id = counts["orders"] + 1 + sid * max(1, spec.ops) + j
    amount = Decimal(rng.randint(100, 999_999)).scaleb(-2)
    return Op("write", (
        ("UPDATE district SET d_next_o_id = d_next_o_id + 1 WHERE d_id = :d", {"d": d}),
        ("INSERT INTO order_line (ol_o_id, ol_d_id, ol_w_id, ol_number, ol_i_id, ol_supply_w_id, "
         "ol_delivery_d, ol_quantity, ol_amount, ol_dist_info) VALUES (:o, :d, 1, 1, :i, 1, 0, :q, "
         ":a, :info)", {"o": o_id, "d": d, "i": item, "q": qty, "a": amount,
                        "info": f"s{sid}o{j}".ljust(24, "x")}),
        ("UPDATE stock SET s_quantity = s_quantity + :q WHERE s_i_id = :i", {"q": qty, "i": item}),
    ))


def _synthetic_op(spec: WorkloadSpec, counts: dict, rng: random.Random, sid: int, j: int) -> Op:
    n = counts["synth"]
    if rng.random() < spec.read_write_ratio:
        if rng.random() < spec.eq_fraction:
            return Op("read_eq", (("SELECT v FROM synth WHERE k = :k", {"k": rng.randrange(n)}),))
        width = max(1, n // 10)
        lo = rng.randrange(max(1, n - width))
        return Op("read_range", (("SELECT v FROM synth WHERE k >= :lo AND k < :hi",
                                  {"lo": lo, "hi": lo + width}),))
    k = rng.randrange(n)
    return Op("write", (("UPDATE synth SET v = v + :d WHERE k = :k",
                         {"d": rng.randint(1, 9), "k": k}),))


def session_ops(spec: WorkloadSpec, counts: dict, sid: int) -> list[Op]:
    """The fixed operation list of one session; independent of mode and timing."""
    rng = random.Random(f"ops:{spec.seed}:{sid}")
    make = _synthetic_op if spec.kind is WorkloadKind.SYNTHETIC else _tpcc_op
    return [make(spec, counts, rng, sid, j) for j in range(spec.ops)]


def check_queries(ds: Dataset) -> list[tuple[str, dict]]:
    """Post-run state probes used by the correctness gate."""
    if ds.kind is WorkloadKind.SYNTHETIC:
        return [("SELECT k, v FROM synth", {}), ("SELECT SUM(v) FROM synth", {})]
    c = ds.counts
    return [
        ("SELECT d_id, d_next_o_id, d_tax FROM district", {}),
        ("SELECT COUNT(*) FROM order_line", {}),
        ("SELECT ol_o_id, ol_d_id, ol_i_id, ol_quantity, ol_amount FROM order_line "
         "WHERE ol_o_id > :o", {"o": c["orders"]}),
        ("SELECT SUM(s_quantity) FROM stock", {}),
        ("SELECT s_i_id, s_quantity FROM stock WHERE s_quantity > :q", {"q": 95}),
        ("SELECT MAX(ol_amount) FROM order_line", {}),
    ]
