"""Server-side row storage for anonymized tables.

Each table keeps its rows in memory and mirrors every insert and update to an
append-only record file. Fields hold either a plaintext value (non-sensitive
columns) or a ciphertext object whose type matches the field's scheme tag.
Secondary indexes are B-trees over ORE fields; their comparator counts calls
so the executor can charge them.
"""
from __future__ import annotations

import json
import os
import struct
import threading
from pathlib import Path

from ..crypto import SCHEME_OF, MalformedCiphertext, OreCipher, cipher_from_bytes
from ..index.btree import CipherBTree, OreKey, comparator
from ..schema import FieldSpec, TableLayout

TABLE_MAGIC = b"HDBTBL"
TABLE_VERSION = 1
MANIFEST_VERSION = 1

_REC = struct.Struct("<BQH")  # op, row id, field count
_FIELD = struct.Struct("<HBI")  # position, value tag, payload length
OP_INSERT, OP_UPDATE = 1, 2
V_NULL, V_INT, V_TEXT, V_CIPHER = 0, 1, 2, 3


class RowRejected(ValueError):
    pass


class CountingComparator:
    """ORE comparator that counts its invocations."""

    def __init__(self):
        self.count = 0

    def __call__(self, a: OreCipher, b: OreCipher) -> int:
        self.count += 1
        return comparator(a, b)

    def take(self) -> int:
        n, self.count = self.count, 0
        return n


def encode_value(v) -> tuple[int, bytes]:
    if v is None:
        return V_NULL, b""
    if isinstance(v, bool):
        raise TypeError("booleans are not storable")
    if isinstance(v, int):
        return V_INT, v.to_bytes(16, "little", signed=True)
    if isinstance(v, str):
        return V_TEXT, v.encode()
    return V_CIPHER, v.to_bytes()


def decode_value(tag: int, payload: bytes):
    if tag == V_NULL:
        return None
    if tag == V_INT:
        return int.from_bytes(payload, "little", signed=True)
    if tag == V_TEXT:
        return payload.decode()
    if tag == V_CIPHER:
        return cipher_from_bytes(payload)
    raise MalformedCiphertext(f"unknown value tag {tag}")


def value_size(v) -> int:
    """Bytes a value occupies on disk, without record framing."""
    return len(encode_value(v)[1])


def check_field(f: FieldSpec, v) -> None:
    if f.scheme is None:
        ok = v is None or (isinstance(v, str) if f.is_text else
                           isinstance(v, int) and not isinstance(v, bool))
        if not ok:
            raise RowRejected(f"field {f.name} expects a plaintext "
                              f"{'text' if f.is_text else 'integer'}, got {type(v).__name__}")
        return
    got = SCHEME_OF.get(type(v))
    if got is not f.scheme:
        raise RowRejected(f"field {f.name} expects a {f.scheme.value} ciphertext, "
                          f"got {type(v).__name__}")


class EncryptedTable:
    def __init__(self, layout: TableLayout, path: str | os.PathLike | None = None):
        self.layout = layout
        self.rows: list[list] = []
        self.cmp = CountingComparator()
        self.indexes: dict[int, CipherBTree] = {}
        self._index_keys: dict[int, list[OreKey]] = {}
        self._lock = threading.RLock()
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self._open_log()

    @property
    def name(self) -> str:
        return self.layout.name

    def __len__(self) -> int:
        return len(self.rows)

    # -- persistence -----------------------------------------------------------------

    def _open_log(self) -> None:
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "ab")
        if fresh:
            self._fh.write(TABLE_MAGIC + bytes([TABLE_VERSION]))
            self._fh.flush()

    def _log(self, op: int, rid: int, values: dict[int, object]) -> None:
        if self._fh is None:
            return
        parts = [_REC.pack(op, rid, len(values))]
        for pos, v in values.items():
            tag, payload = encode_value(v)
            parts.append(_FIELD.pack(pos, tag, len(payload)))
            parts.append(payload)
        self._fh.write(b"".join(parts))

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @classmethod
    def load(cls, layout: TableLayout, path) -> "EncryptedTable":
        """Replay a record file; the returned table keeps appending to it."""
        t = cls(layout)
        data = Path(path).read_bytes()
        if not data.startswith(TABLE_MAGIC) or data[len(TABLE_MAGIC)] != TABLE_VERSION:
            raise MalformedCiphertext(f"{path} is not a table file")
        pos = len(TABLE_MAGIC) + 1
        try:
            while pos < len(data):
                op, rid, n = _REC.unpack_from(data, pos)
                pos += _REC.size
                vals = {}
                for _ in range(n):
                    fpos, tag, ln = _FIELD.unpack_from(data, pos)
                    pos += _FIELD.size
                    vals[fpos] = decode_value(tag, data[pos:pos + ln])
                    pos += ln
                if op == OP_INSERT:
                    if rid != len(t.rows):
                        raise MalformedCiphertext(f"row ids out of sequence at {rid}")
                    t.insert(tuple(vals[i] for i in range(len(layout.fields))))
                elif op == OP_UPDATE:
                    t.update(rid, vals)
                else:
                    raise MalformedCiphertext(f"unknown record op {op}")
        except struct.error as e:
            raise MalformedCiphertext(f"truncated table file {path}") from e
        t.path = Path(path)
        t._open_log()
        return t

    # -- rows --------------------------------------------------------------------------

    def insert(self, row: tuple | list) -> int:
        """Validate and append a row; returns its id. Index maintenance is counted in ``cmp``."""
        fields = self.layout.fields
        if len(row) != len(fields):
            raise RowRejected(f"{self.name} has {len(fields)} fields, got {len(row)}")
        for f, v in zip(fields, row):
            check_field(f, v)
        with self._lock:
            rid = len(self.rows)
            self.rows.append(list(row))
            for pos, tree in self.indexes.items():
                k = OreKey(row[pos], rid)
                self._index_keys[pos].append(k)
                tree.insert(k)
            self._log(OP_INSERT, rid, dict(enumerate(row)))
        return rid

    def insert_wire(self, blobs: list[bytes | int | str | None]) -> int:
        """Insert a row whose ciphertext fields arrive serialized."""
        if len(blobs) != len(self.layout.fields):
            raise RowRejected(f"{self.name} has {len(self.layout.fields)} fields, got {len(blobs)}")
        row = []
        for f, b in zip(self.layout.fields, blobs):
            if f.scheme is None:
                row.append(b)
            elif not isinstance(b, (bytes, bytearray)):
                raise RowRejected(f"field {f.name} expects serialized ciphertext")
            else:
                try:
                    row.append(cipher_from_bytes(bytes(b)))
                except (struct.error, IndexError) as e:
                    raise MalformedCiphertext(f"field {f.name}: truncated ciphertext") from e
        return self.insert(row)

    def update(self, rid: int, values: dict[int, object]) -> None:
        fields = self.layout.fields
        for pos, v in values.items():
            check_field(fields[pos], v)
        with self._lock:
            row = self.rows[rid]
            for pos, v in values.items():
                if pos in self.indexes:
                    keys = self._index_keys[pos]
                    self.indexes[pos].delete(keys[rid])
                    keys[rid] = OreKey(v, rid)
                    self.indexes[pos].insert(keys[rid])
                row[pos] = v
            self._log(OP_UPDATE, rid, values)

    def create_index(self, field: str | int) -> CipherBTree:
        pos = field if isinstance(field, int) else self.layout.position(field)
        f = self.layout.fields[pos]
        if f.scheme is None or f.scheme.value != "ore":
            raise ValueError(f"index needs an ORE field, {f.name} is {f.scheme}")
        with self._lock:
            tree = CipherBTree(compare=self.cmp)
            keys = [OreKey(r[pos], rid) for rid, r in enumerate(self.rows)]
            for k in keys:
                tree.insert(k)
            self.indexes[pos] = tree
            self._index_keys[pos] = keys
        return tree

    def attach_index(self, field: str, tree: CipherBTree) -> None:
        """Adopt a tree loaded from index pages; it must cover every row."""
        pos = self.layout.position(field)
        keys: list[OreKey | None] = [None] * len(self.rows)
        for k in tree.keys():
            keys[k.row_id] = k
        if any(k is None for k in keys):
            raise ValueError(f"index pages for {field} do not cover every row")
        with self._lock:
            self.indexes[pos] = tree
            self._index_keys[pos] = keys

    def data_bytes(self) -> int:
        """Stored value bytes, excluding index pages and record framing."""
        return sum(value_size(v) for r in self.rows for v in r)

    def field_bytes(self) -> dict[str, int]:
        out = {}
        for i, f in enumerate(self.layout.fields):
            out[f.name] = sum(value_size(r[i]) for r in self.rows)
        return out


class Database:
    """A set of tables plus a JSON manifest under one directory."""

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self.tables: dict[str, EncryptedTable] = {}
        if self.root is not None:
            (self.root / "tables").mkdir(parents=True, exist_ok=True)

    def create_table(self, layout: TableLayout) -> EncryptedTable:
        if layout.name in self.tables:
            raise ValueError(f"table {layout.name} exists")
        path = self.root / "tables" / f"{layout.name}.tbl" if self.root else None
        t = self.tables[layout.name] = EncryptedTable(layout, path)
        return t

    def table(self, name: str) -> EncryptedTable:
        try:
            return self.tables[name]
        except KeyError:
            raise KeyError(f"no table {name!r}") from None

    def data_bytes(self) -> int:
        return sum(t.data_bytes() for t in self.tables.values())

    def save(self) -> None:
        """Flush record files, write index pages and the manifest."""
        if self.root is None:
            raise ValueError("in-memory database has no root directory")
        (self.root / "indexes").mkdir(exist_ok=True)
        doc = {"version": MANIFEST_VERSION, "tables": []}
        for t in self.tables.values():
            t.flush()
            idx = []
            for pos, tree in t.indexes.items():
                fname = f"{t.name}.{t.layout.fields[pos].name}.idx"
                tree.save(self.root / "indexes" / fname)
                idx.append(t.layout.fields[pos].name)
            doc["tables"].append({"layout": t.layout.to_dict(), "indexes": idx, "rows": len(t)})
        tmp = self.root / "manifest.json.tmp"
        tmp.write_text(json.dumps(doc, indent=2))
        os.replace(tmp, self.root / "manifest.json")

    @classmethod
    def open(cls, root) -> "Database":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {doc.get('version')}")
        db = cls(root)
        for td in doc["tables"]:
            layout = TableLayout.from_dict(td["layout"])
            t = EncryptedTable.load(layout, root / "tables" / f"{layout.name}.tbl")
            if len(t) != td["rows"]:
                raise ValueError(f"{layout.name}: manifest says {td['rows']} rows, file has {len(t)}")
            for name in td["indexes"]:
                page_file = root / "indexes" / f"{layout.name}.{name}.idx"
                if page_file.exists():
                    t.attach_index(name, CipherBTree.load(page_file, compare=t.cmp))
                else:
                    t.create_index(name)
            db.tables[layout.name] = t
        return db

    def close(self) -> None:
        for t in self.tables.values():
            t.close()
