"""Trusted client: key custody, query rewriting and result decryption.

Rewritten queries reference anonymous names only and carry every literal
as ciphertext under each scheme the server might use for that predicate.
In adaptive mode a predicate therefore carries both the enclave (RND)
encoding and the software encoding, and the server picks per call.
"""
from __future__ import annotations

import base64
import enum
import json
import os
import random
import secrets
import threading
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .crypto import SCHEME_OF, AheCipher, ColumnKey, MasterKey, Scheme, derive_column_key
from .crypto.codec import decrypt_value, encrypt_value
from .enclave.config import VirtualCosts
from .query import Agg, Insert, QueryAst, Select, Update, parse
from .schema import RETRIEVAL_ORDER, ColumnSpec, Mode, TableSchema

CATALOG_VERSION = 1
PLAIN = "plain"


class SchemeMissing(ValueError):
    pass


class UnknownColumn(KeyError):
    pass


class Capability(str, enum.Enum):
    PLAIN = "plain"
    DET_EQUAL = "det-equal"
    ORE_COMPARE = "ore-compare"
    HE_ADD = "he-add"
    HE_MUL = "he-mul"
    TEE_BRIDGE = "tee-bridge"
    CLIENT_ROUND_TRIP = "client-round-trip"


@dataclass(frozen=True)
class ColRef:
    column: str
    label: str
    is_text: bool
    fields: dict  # scheme value or "plain" -> field position

    def has(self, enc: str) -> bool:
        return enc in self.fields

    @property
    def plain(self) -> bool:
        return PLAIN in self.fields

    def retrieval(self) -> str:
        if self.plain:
            return PLAIN
        for s in RETRIEVAL_ORDER:
            if s.value in self.fields:
                return s.value
        raise SchemeMissing(f"column {self.column} has no retrievable encoding")


@dataclass
class RPred:
    col: ColRef
    op: str
    literals: dict  # encoding -> literal ciphertext (or raw value for plain)
    capabilities: frozenset
    arith: str | None = None
    addend: dict = field(default_factory=dict)


@dataclass
class RAgg:
    func: str
    col: ColRef | None
    zero: AheCipher | None = None


@dataclass
class RSelect:
    table: str
    items: list  # ColRef | RAgg
    preds: list[RPred]
    group_by: ColRef | None = None
    order_by: ColRef | None = None
    desc: bool = False
    limit: int | None = None
    client_micros: float = 0.0


@dataclass
class RInsert:
    table: str
    row: tuple
    client_micros: float = 0.0


@dataclass
class RSet:
    col: ColRef
    values: dict  # literal assignment: encoding -> ciphertext
    arith: str | None = None
    addend: dict = field(default_factory=dict)


@dataclass
class RUpdate:
    table: str
    sets: list[RSet]
    preds: list[RPred]
    client_micros: float = 0.0


RewrittenQuery = RSelect | RInsert | RUpdate


@dataclass(frozen=True)
class ResultColumn:
    table: str
    column: str  # anonymous name, "" for COUNT(*)
    func: str | None = None


@dataclass
class ResultSet:
    columns: list[ResultColumn]
    rows: list[tuple]
    affected: int | None = None


@dataclass
class RoundTrip:
    """Intermediate homomorphic results the client must re-encrypt."""
    col: ColRef
    values: list
    want: tuple[Scheme, ...]


def _wire_value(v):
    if hasattr(v, "to_bytes") and not isinstance(v, int):
        return {"ct": base64.b64encode(v.to_bytes()).decode()}
    if isinstance(v, dict):
        return {str(k): _wire_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_wire_value(x) for x in v]
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (frozenset, set)):
        return sorted(_wire_value(x) for x in v)
    if hasattr(v, "__dataclass_fields__"):
        return {k: _wire_value(getattr(v, k)) for k in v.__dataclass_fields__}
    return v


def to_wire(q: RewrittenQuery) -> str:
    """The serialized form the server receives."""
    return json.dumps({"kind": type(q).__name__, "body": _wire_value(q)}, sort_keys=True)


class Client:
    def __init__(self, master: MasterKey, mode: Mode | str, seed: int | None = None,
                 costs: VirtualCosts | None = None):
        self.master = master
        self.mode = Mode(mode)
        self.costs = costs or VirtualCosts()
        self._rng = random.Random(seed) if seed is not None else secrets.SystemRandom()
        self.tables: dict[str, TableSchema] = {}
        self._by_anon: dict[str, TableSchema] = {}
        self._keys: dict[tuple[str, Scheme], ColumnKey] = {}
        self._lock = threading.Lock()
        self._meter = threading.local()

    # -- catalog ---------------------------------------------------------------

    def _token(self, taken: set[str]) -> str:
        while True:
            t = f"{self._rng.getrandbits(64):016x}"
            if t not in taken:
                taken.add(t)
                return t

    def register_table(self, name: str, specs: list[ColumnSpec]) -> TableSchema:
        names = [c.plain_name for c in specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in {name}")
        with self._lock:
            if name in self.tables:
                raise ValueError(f"table {name} already registered")
            taken = set(self._by_anon)
            anon = self._token(taken)
            cols = []
            for spec in specs:
                c = ColumnSpec(spec.plain_name, spec.data_kind, spec.sensitive, spec.schemes,
                               spec.scale)
                c.resolve(self.mode)
                c.anon_name = self._token(taken)
                cols.append(c)
            t = TableSchema(name, anon, cols)
            self.tables[name] = t
            self._by_anon[anon] = t
            return t

    def table(self, name: str) -> TableSchema:
        try:
            return self.tables[name]
        except KeyError:
            raise KeyError(f"unknown table {name!r}") from None

    def save_catalog(self, path) -> None:
        doc = {"version": CATALOG_VERSION, "mode": self.mode.value,
               "tables": [t.to_dict() for t in self.tables.values()]}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load_catalog(cls, path, master: MasterKey, **kw) -> "Client":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != CATALOG_VERSION:
            raise ValueError(f"unsupported catalog version {doc.get('version')}")
        c = cls(master, doc["mode"], **kw)
        for td in doc["tables"]:
            t = TableSchema.from_dict(td)
            c.tables[t.plain_name] = t
            c._by_anon[t.anon_name] = t
        return c

    # -- keys and encryption -----------------------------------------------------

    def key(self, label: str, scheme: Scheme) -> ColumnKey:
        k = self._keys.get((label, scheme))
        if k is None:
            k = self._keys[(label, scheme)] = derive_column_key(self.master, label, scheme)
        return k

    def _charge(self, micros: float) -> None:
        self._meter.total = getattr(self._meter, "total", 0.0) + micros

    def _take_meter(self) -> float:
        v = getattr(self._meter, "total", 0.0)
        self._meter.total = 0.0
        return v

    def _enc(self, t: TableSchema, c: ColumnSpec, scheme: Scheme, encoded):
        self._charge(self.costs.encrypt(scheme))
        return encrypt_value(encoded, self.key(t.label(c), scheme))

    def encrypt_row(self, table: str, values) -> tuple:
        t = self.table(table)
        if isinstance(values, dict):
            missing = set(t.by_plain) - set(values)
            if missing:
                raise ValueError(f"missing values for {sorted(missing)}")
            values = [values[c.plain_name] for c in t.columns]
        if len(values) != len(t.columns):
            raise ValueError(f"{table} has {len(t.columns)} columns, got {len(values)} values")
        enc = {c.anon_name: c.encode(v) for c, v in zip(t.columns, values)}
        row = []
        for f in t.layout.fields:
            c = t.by_anon[f.column]
            row.append(enc[f.column] if f.scheme is None else self._enc(t, c, f.scheme, enc[f.column]))
        return tuple(row)

    # -- rewriting ---------------------------------------------------------------

    def _ref(self, t: TableSchema, plain: str) -> tuple[ColumnSpec, ColRef]:
        c = t.column(plain)
        return c, ColRef(c.anon_name, t.label(c), c.is_text, t.layout.column_fields(c.anon_name))

    def _need(self, c: ColumnSpec, options: tuple[Scheme, ...], what: str) -> list[Scheme]:
        have = [s for s in options if s in c.schemes]
        if not have:
            raise SchemeMissing(f"{what} on {c.plain_name} needs one of "
                                f"{[s.value for s in options]}, column has {sorted(s.value for s in c.schemes)}")
        return have

    def _pred(self, t: TableSchema, cond) -> RPred:
        c, ref = self._ref(t, cond.column)
        bound = c.encode(cond.value)
        if not c.sensitive:
            addend = {PLAIN: c.encode(cond.arith[1])} if cond.arith else {}
            return RPred(ref, cond.op, {PLAIN: bound}, frozenset({Capability.PLAIN}),
                         cond.arith[0] if cond.arith else None, addend)
        if cond.arith:
            a_op, a_val = cond.arith
            if c.is_text:
                raise TypeError("arithmetic on a text column")
            he = Scheme.AHE if a_op == "+" else Scheme.MHE
            a_enc = c.encode(a_val)
            caps, lits, addend = set(), {}, {}
            if he in c.schemes and Scheme.ORE in c.schemes:
                addend[he.value] = self._enc(t, c, he, a_enc)
                lits[Scheme.ORE.value] = self._enc(t, c, Scheme.ORE, bound)
                caps |= {Capability.HE_ADD if he is Scheme.AHE else Capability.HE_MUL,
                         Capability.CLIENT_ROUND_TRIP, Capability.ORE_COMPARE}
            if Scheme.RND in c.schemes:
                addend[Scheme.RND.value] = self._enc(t, c, Scheme.RND, a_enc)
                lits[Scheme.RND.value] = self._enc(t, c, Scheme.RND, bound)
                caps.add(Capability.TEE_BRIDGE)
            if not caps:
                raise SchemeMissing(f"arithmetic predicate on {c.plain_name} needs "
                                    f"{he.value}+ore or rnd")
            return RPred(ref, cond.op, lits, frozenset(caps), a_op, addend)
        options = (Scheme.DET, Scheme.ORE, Scheme.RND) if cond.op == "=" else (Scheme.ORE, Scheme.RND)
        lits, caps = {}, set()
        for s in self._need(c, options, f"predicate {cond.op}"):
            lits[s.value] = self._enc(t, c, s, bound)
            caps.add({Scheme.DET: Capability.DET_EQUAL, Scheme.ORE: Capability.ORE_COMPARE,
                      Scheme.RND: Capability.TEE_BRIDGE}[s])
        return RPred(ref, cond.op, lits, frozenset(caps))

    def rewrite(self, q: QueryAst | str, params: dict | None = None) -> RewrittenQuery:
        if isinstance(q, str):
            q = parse(q, params)
        self._take_meter()
        t = self.table(q.table)
        if isinstance(q, Insert):
            row = self.encrypt_row(q.table, dict(zip(q.columns, q.values)))
            return RInsert(t.anon_name, row, self._take_meter())
        preds = [self._pred(t, c) for c in q.where]
        if isinstance(q, Update):
            sets = []
            for a in q.sets:
                c, ref = self._ref(t, a.column)
                v = c.encode(a.value)
                if a.arith is None:
                    vals = {PLAIN: v} if not c.sensitive else \
                        {s.value: self._enc(t, c, s, v) for s in c.schemes}
                    sets.append(RSet(ref, vals))
                    continue
                if not c.sensitive:
                    sets.append(RSet(ref, {}, a.arith, {PLAIN: v}))
                    continue
                he = Scheme.AHE if a.arith == "+" else Scheme.MHE
                addend = {s.value: self._enc(t, c, s, v)
                          for s in self._need(c, (he, Scheme.RND), f"SET {a.arith}")}
                sets.append(RSet(ref, {}, a.arith, addend))
            return RUpdate(t.anon_name, sets, preds, self._take_meter())
        assert isinstance(q, Select)
        items = []
        plain_items = [c.plain_name for c in t.columns] if q.items == ["*"] else q.items
        for it in plain_items:
            if isinstance(it, Agg):
                if it.column is None:
                    items.append(RAgg("COUNT", None))
                    continue
                c, ref = self._ref(t, it.column)
                zero = None
                if it.func == "SUM" and c.sensitive:
                    if c.is_text:
                        raise TypeError("SUM over a text column")
                    self._need(c, (Scheme.AHE, Scheme.RND), "SUM")
                    zero = self._enc(t, c, Scheme.AHE, 0)
                elif it.func in ("MIN", "MAX") and c.sensitive:
                    self._need(c, (Scheme.ORE, Scheme.RND), it.func)
                items.append(RAgg(it.func, ref, zero))
            else:
                c, ref = self._ref(t, it)
                ref.retrieval()
                items.append(ref)
        rq = RSelect(t.anon_name, items, preds, desc=q.desc, limit=q.limit)
        if q.group_by:
            c, rq.group_by = self._ref(t, q.group_by)
            if c.sensitive:
                self._need(c, (Scheme.DET, Scheme.RND), "GROUP BY")
        if q.order_by:
            c, rq.order_by = self._ref(t, q.order_by)
            if c.sensitive:
                self._need(c, (Scheme.ORE, Scheme.RND), "ORDER BY")
        rq.client_micros = self._take_meter()
        return rq

    # -- results -------------------------------------------------------------------

    def _column(self, rc: ResultColumn) -> tuple[TableSchema, ColumnSpec]:
        t = self._by_anon.get(rc.table)
        c = t.by_anon.get(rc.column) if t else None
        if c is None:
            raise UnknownColumn(f"result column {rc.table}.{rc.column} is not in the catalog")
        return t, c

    def decrypt_value(self, t: TableSchema, c: ColumnSpec, v):
        if v is None:
            return None
        if not c.sensitive:
            return c.decode(v)
        scheme = SCHEME_OF.get(type(v))
        if scheme is None:
            raise TypeError(f"sensitive column {c.plain_name} returned a non-ciphertext value")
        return c.decode(decrypt_value(v, self.key(t.label(c), scheme), c.is_text))

    def decrypt_results(self, rs: ResultSet) -> list[tuple]:
        cols = [None if rc.func == "COUNT" else self._column(rc) for rc in rs.columns]
        out = []
        for row in rs.rows:
            out.append(tuple(v if tc is None else self.decrypt_value(*tc, v)
                             for tc, v in zip(cols, row)))
        return out

    def round_trip(self, req: RoundTrip) -> tuple[list[dict], float]:
        """Decrypt intermediate results and re-encrypt them under the wanted schemes."""
        t = self._by_anon[req.col.label.split(".")[0]]
        c = t.by_anon[req.col.column]
        out, cost = [], 0.0
        for v in req.values:
            plain = decrypt_value(v, self.key(req.col.label, SCHEME_OF[type(v)]))
            cost += self.costs.client_decrypt
            enc = {}
            for s in req.want:
                enc[s.value] = encrypt_value(plain, self.key(req.col.label, s))
                cost += self.costs.encrypt(s)
            out.append(enc)
        return out, cost + self.costs.round_trip


class Keystore:
    """Master key wrapped under a passphrase: scrypt then AES-GCM."""

    MAGIC = b"HDBKEYS1"

    @classmethod
    def save(cls, path, master: MasterKey, passphrase: str) -> None:
        salt = os.urandom(16)
        k = Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode())
        nonce = os.urandom(12)
        ct = AESGCM(k).encrypt(nonce, master.secret, cls.MAGIC)
        with open(path, "wb") as fh:
            fh.write(cls.MAGIC + salt + nonce + ct)

    @classmethod
    def load(cls, path, passphrase: str) -> MasterKey:
        with open(path, "rb") as fh:
            data = fh.read()
        if not data.startswith(cls.MAGIC):
            raise ValueError("not a keystore file")
        salt, nonce, ct = data[8:24], data[24:36], data[36:]
        k = Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode())
        try:
            return MasterKey(AESGCM(k).decrypt(nonce, ct, cls.MAGIC))
        except InvalidTag:
            raise ValueError("wrong passphrase or corrupted keystore") from None
