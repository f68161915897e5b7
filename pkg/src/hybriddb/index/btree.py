"""B-tree over order-revealing ciphertexts.

The tree never sees key material: every ordering decision goes through the
injected comparator (``ore_compare`` by default). Keys are ``(cipher, row_id)``
pairs so duplicates of one plaintext are kept and iterate by row id.
Deletion is by tombstone; :meth:`CipherBTree.rebuild` compacts.
"""
from __future__ import annotations

import math
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator

from ..crypto.ore import OreCipher, ore_compare

Comparator = Callable[[OreCipher, OreCipher], int]

DEFAULT_FANOUT = 64
PAGE_MAGIC = b"HDBIDX"
PAGE_VERSION = 1
KEY_LAYOUT_VERSION = 1


class EmptyIndex(LookupError):
    pass


class InvariantViolation(AssertionError):
    pass


def comparator(a: OreCipher, b: OreCipher) -> int:
    return int(ore_compare(a, b))


# The five comparison operators of the ore_en operator class, by sign test.
OPERATORS: dict[str, Callable[[OreCipher, OreCipher], bool]] = {
    "<": lambda a, b: comparator(a, b) < 0,
    "<=": lambda a, b: comparator(a, b) <= 0,
    "=": lambda a, b: comparator(a, b) == 0,
    ">=": lambda a, b: comparator(a, b) >= 0,
    ">": lambda a, b: comparator(a, b) > 0,
}


@dataclass(slots=True, eq=False)
class OreKey:
    cipher: OreCipher
    row_id: int


class _Node:
    __slots__ = ("keys", "children")

    def __init__(self, keys=None, children=None):
        self.keys: list[OreKey] = keys if keys is not None else []
        self.children: list[_Node] = children if children is not None else []

    @property
    def leaf(self) -> bool:
        return not self.children


class _RWLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def read(self):
        return _Guard(self, False)

    def write(self):
        return _Guard(self, True)


class _Guard:
    __slots__ = ("lock", "exclusive")

    def __init__(self, lock: _RWLock, exclusive: bool):
        self.lock, self.exclusive = lock, exclusive

    def __enter__(self):
        lk = self.lock
        with lk._cond:
            if self.exclusive:
                while lk._writer or lk._readers:
                    lk._cond.wait()
                lk._writer = True
            else:
                while lk._writer:
                    lk._cond.wait()
                lk._readers += 1

    def __exit__(self, *exc):
        lk = self.lock
        with lk._cond:
            if self.exclusive:
                lk._writer = False
            else:
                lk._readers -= 1
            lk._cond.notify_all()


class CipherBTree:
    def __init__(self, fanout: int = DEFAULT_FANOUT, compare: Comparator = comparator):
        if fanout < 4 or fanout % 2:
            raise ValueError("fanout must be an even number >= 4")
        self.fanout = fanout
        self._t = fanout // 2
        self._cmp = compare
        self._root = _Node()
        self.height = 1
        self._count = 0
        self._dead: set[int] = set()
        self._lock = _RWLock()

    # -- ordering ----------------------------------------------------------

    def _key_cmp(self, a: OreKey, b: OreKey) -> int:
        c = self._cmp(a.cipher, b.cipher)
        if c:
            return c
        return (a.row_id > b.row_id) - (a.row_id < b.row_id)

    def _first_at_least(self, keys: list[OreKey], bound: OreCipher, inclusive: bool) -> int:
        """Index of the first key whose cipher is >= bound (> bound when exclusive)."""
        lo, hi = 0, len(keys)
        while lo < hi:
            mid = (lo + hi) // 2
            c = self._cmp(keys[mid].cipher, bound)
            if c > 0 or (inclusive and c == 0):
                hi = mid
            else:
                lo = mid + 1
        return lo

    # -- mutation ------------------------------------------------------------

    def __len__(self) -> int:
        return self._count - len(self._dead)

    @property
    def key_count(self) -> int:
        """Stored keys including tombstoned ones."""
        return self._count

    def insert(self, key: OreKey) -> None:
        with self._lock.write():
            self._insert_one(key)

    def insert_many(self, keys) -> int:
        """Insert a batch under one write lock; returns how many were added."""
        n = 0
        with self._lock.write():
            for key in keys:
                self._insert_one(key)
                n += 1
        return n

    def _insert_one(self, key: OreKey) -> None:
        root = self._root
        if len(root.keys) == self.fanout - 1:
            new_root = _Node(children=[root])
            self._split_child(new_root, 0)
            self._root = new_root
            self.height += 1
        self._insert_nonfull(self._root, key)
        self._count += 1

    def _split_child(self, parent: _Node, i: int) -> None:
        t = self._t
        child = parent.children[i]
        right = _Node(child.keys[t:], child.children[t:] if child.children else [])
        median = child.keys[t - 1]
        child.keys = child.keys[: t - 1]
        if child.children:
            child.children = child.children[:t]
        parent.keys.insert(i, median)
        parent.children.insert(i + 1, right)

    def _insert_nonfull(self, node: _Node, key: OreKey) -> None:
        # binary search inlined: this loop dominates bulk loading
        cmp, cipher, rid = self._cmp, key.cipher, key.row_id
        while True:
            keys = node.keys
            lo, hi = 0, len(keys)
            while lo < hi:
                mid = (lo + hi) // 2
                k = keys[mid]
                c = cmp(cipher, k.cipher)
                if c < 0 or (c == 0 and rid < k.row_id):
                    hi = mid
                else:
                    lo = mid + 1
            i = lo
            if not node.children:
                node.keys.insert(i, key)
                return
            if len(node.children[i].keys) == self.fanout - 1:
                self._split_child(node, i)
                if self._key_cmp(key, node.keys[i]) >= 0:
                    i += 1
            node = node.children[i]

    def delete(self, key: OreKey) -> bool:
        """Tombstone one stored entry equal to ``key``; prefers the identical object."""
        with self._lock.write():
            match = None
            for k in self._equal_run(key):
                if id(k) in self._dead:
                    continue
                if k is key:
                    match = k
                    break
                if match is None:
                    match = k
            if match is None:
                return False
            self._dead.add(id(match))
            return True

    def _equal_run(self, key: OreKey) -> Iterator[OreKey]:
        for k in self._scan(self._root, key.cipher, True, key.cipher, True):
            if k.row_id == key.row_id:
                yield k

    def rebuild(self) -> "CipherBTree":
        """Compact tombstones by reinserting every live key into a fresh tree."""
        fresh = CipherBTree(self.fanout, self._cmp)
        for k in self.keys():
            fresh.insert(OreKey(k.cipher, k.row_id))
        return fresh

    # -- queries ---------------------------------------------------------------

    def _scan(self, node: _Node, low, low_inc, high, high_inc) -> Iterator[OreKey]:
        keys = node.keys
        start = 0 if low is None else self._first_at_least(keys, low, low_inc)
        for i in range(start, len(keys) + 1):
            if node.children:
                yield from self._scan(node.children[i], low, low_inc, high, high_inc)
            if i == len(keys):
                return
            k = keys[i]
            if high is not None:
                c = self._cmp(k.cipher, high)
                if c > 0 or (c == 0 and not high_inc):
                    return
            yield k

    def range_scan(self, low: OreCipher | None = None, high: OreCipher | None = None,
                   low_inclusive: bool = True, high_inclusive: bool = True) -> Iterator[int]:
        """Row ids whose key lies in the interval, ascending; ``None`` is unbounded."""
        if low is not None and high is not None and self._cmp(low, high) > 0:
            raise ValueError("inverted range bounds")
        with self._lock.read():
            dead = self._dead
            out = [k.row_id for k in self._scan(self._root, low, low_inclusive, high, high_inclusive)
                   if id(k) not in dead]
        return iter(out)

    def keys(self) -> Iterator[OreKey]:
        with self._lock.read():
            dead = self._dead
            out = [k for k in self._scan(self._root, None, True, None, True) if id(k) not in dead]
        return iter(out)

    def _edge(self, rightmost: bool) -> OreKey:
        with self._lock.read():
            if not self._dead:
                node = self._root
                if node.keys:
                    while node.children:
                        node = node.children[-1 if rightmost else 0]
                    return node.keys[-1 if rightmost else 0]
            else:
                live = [k for k in self._scan(self._root, None, True, None, True)
                        if id(k) not in self._dead]
                if live:
                    return live[-1 if rightmost else 0]
        raise EmptyIndex("index holds no live keys")

    def min_key(self) -> OreKey:
        return self._edge(False)

    def max_key(self) -> OreKey:
        return self._edge(True)

    # -- structure ---------------------------------------------------------------

    def check_invariants(self, check_order: bool = True) -> None:
        """Occupancy, child counts and uniform leaf depth; key order too unless disabled."""
        t = self._t
        leaf_depths = set()
        prev: list[OreKey | None] = [None]

        def walk(node: _Node, depth: int, is_root: bool):
            n = len(node.keys)
            if n > self.fanout - 1:
                raise InvariantViolation(f"node with {n} keys exceeds fanout {self.fanout}")
            if not is_root and n < t - 1:
                raise InvariantViolation(f"non-root node with {n} < {t - 1} keys")
            if node.children and len(node.children) != n + 1:
                raise InvariantViolation("child count != key count + 1")
            if not check_order:
                for child in node.children:
                    walk(child, depth + 1, False)
                if not node.children:
                    leaf_depths.add(depth)
                return
            for i in range(n + 1):
                if node.children:
                    walk(node.children[i], depth + 1, False)
                if i < n:
                    k = node.keys[i]
                    if prev[0] is not None and self._key_cmp(prev[0], k) > 0:
                        raise InvariantViolation("in-order traversal out of order")
                    prev[0] = k
            if not node.children:
                leaf_depths.add(depth)

        walk(self._root, 1, True)
        if leaf_depths != {self.height}:
            raise InvariantViolation(f"leaf depths {leaf_depths} vs height {self.height}")

    def height_bound(self) -> int:
        n = self._count
        if n <= 1:
            return 1
        return math.ceil(math.log(n, math.ceil(self.fanout / 2))) + 1

    # -- persistence ------------------------------------------------------------------

    def save(self, path) -> None:
        """Page file: header, then pages in breadth-first order (root is page 0)."""
        with self._lock.read():
            pages: list[_Node] = []
            ids: dict[int, int] = {}
            q = deque([self._root])
            while q:
                node = q.popleft()
                ids[id(node)] = len(pages)
                pages.append(node)
                q.extend(node.children)
            out = [PAGE_MAGIC, struct.pack("<BHBIHQI", PAGE_VERSION, self.fanout,
                                           KEY_LAYOUT_VERSION, 0, self.height, self._count,
                                           len(pages))]
            for pid, node in enumerate(pages):
                out.append(struct.pack("<IBH", pid, 0 if node.children else 1, len(node.keys)))
                for k in node.keys:
                    buf = k.cipher.to_bytes()
                    out.append(struct.pack("<QBI", k.row_id, id(k) in self._dead, len(buf)))
                    out.append(buf)
                out.append(struct.pack("<H", len(node.children)))
                out.extend(struct.pack("<I", ids[id(c)]) for c in node.children)
        with open(path, "wb") as fh:
            fh.write(b"".join(out))

    @classmethod
    def load(cls, path, compare: Comparator = comparator) -> "CipherBTree":
        with open(path, "rb") as fh:
            data = fh.read()
        if not data.startswith(PAGE_MAGIC):
            raise ValueError("not an index page file")
        pos = len(PAGE_MAGIC)
        hdr = struct.Struct("<BHBIHQI")
        version, fanout, layout, root, height, count, n_pages = hdr.unpack_from(data, pos)
        pos += hdr.size
        if version != PAGE_VERSION or layout != KEY_LAYOUT_VERSION:
            raise ValueError(f"unsupported index version {version}/{layout}")
        tree = cls(fanout, compare)
        nodes = [_Node() for _ in range(n_pages)]
        links: list[list[int]] = []
        for _ in range(n_pages):
            pid, _leaf, nkeys = struct.unpack_from("<IBH", data, pos)
            pos += 7
            node = nodes[pid]
            for _ in range(nkeys):
                row_id, dead, ln = struct.unpack_from("<QBI", data, pos)
                pos += 13
                key = OreKey(OreCipher.from_bytes(data[pos:pos + ln]), row_id)
                pos += ln
                node.keys.append(key)
                if dead:
                    tree._dead.add(id(key))
            (nchild,) = struct.unpack_from("<H", data, pos)
            pos += 2
            links.append(list(struct.unpack_from(f"<{nchild}I", data, pos)))
            pos += 4 * nchild
        for node, kids in zip(nodes, links):
            node.children = [nodes[c] for c in kids]
        tree._root, tree.height, tree._count = nodes[root], height, count
        return tree


def ore_min(tree: CipherBTree) -> OreCipher:
    return tree.min_key().cipher


def ore_max(tree: CipherBTree) -> OreCipher:
    return tree.max_key().cipher
