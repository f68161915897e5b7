"""Block-wise order-revealing encryption with left/right ciphertext halves.

Each ciphertext carries a deterministic *left* half (one PRF token and one
permuted slot index per block) and a randomized *right* half (a nonce plus,
for every block, a table of masked comparison trits indexed by permuted slot).
Comparing ``a`` with ``b`` walks the left halves until the first differing
block, then opens exactly one trit of ``b``'s right table with ``a``'s token.
What a comparison reveals is the order and the index of the first differing
block; fresh nonces make repeated encryptions of one value byte-distinct.

All per-block PRF work is batched through AES-ECB so an encryption is a
handful of vectorised calls regardless of block width.
"""
from __future__ import annotations

import enum
import hashlib
import secrets
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .keys import ColumnKey, Scheme
from .wire import TAG_ORE, Reader, Writer

DEFAULT_BITS = 32
DEFAULT_BLOCK_WIDTH = 8
TOKEN_BYTES = 16
NONCE_BYTES = 16

# Public key for the fixed-key AES correlation-robust hash.
_FIXED_HASH_KEY = hashlib.sha256(b"hybriddb/ore/fixed-key-hash/v1").digest()[:16]


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


class LayoutMismatch(ValueError):
    pass


class OreRangeError(OverflowError):
    pass


_tls = threading.local()


def _ecb(key: bytes):
    cache = getattr(_tls, "enc", None)
    if cache is None:
        cache = _tls.enc = {}
    enc = cache.get(key)
    if enc is None:
        if len(cache) > 4096:
            cache.clear()
        enc = cache[key] = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc


def _fixed_hash_many(x: np.ndarray) -> np.ndarray:
    """H(x) = pi(x) xor x over rows of a (k, 16) uint8 array; returns trits."""
    y = np.frombuffer(_ecb(_FIXED_HASH_KEY).update(x.tobytes()), dtype=np.uint8).reshape(x.shape)
    y = y ^ x
    return y[:, :4].copy().view("<u4").ravel() % 3


def _fixed_hash_one(token: bytes, nonce: bytes) -> int:
    x = bytes(p ^ q for p, q in zip(token, nonce))
    y = _ecb(_FIXED_HASH_KEY).update(x)
    return int.from_bytes(bytes(p ^ q for p, q in zip(y[:4], x[:4])), "little") % 3


@lru_cache(maxsize=16)
def _template(n_blocks: int, width: int) -> np.ndarray:
    """PRF input rows for every (domain, block, slot); prefix bytes left zero."""
    slots = 1 << width
    t = np.zeros((2, n_blocks, slots, 16), dtype=np.uint8)
    t[1, :, :, 0] = 1
    t[:, :, :, 1] = np.arange(n_blocks, dtype=np.uint8)[None, :, None]
    j = np.arange(slots, dtype="<u2").view(np.uint8).reshape(slots, 2)
    t[:, :, :, 10:12] = j[None, None, :, :]
    t.setflags(write=False)
    return t


@dataclass(frozen=True, slots=True)
class OreCipher:
    key_id: bytes
    bits: int
    block_width: int
    nonce: bytes
    tokens: tuple[bytes, ...]
    slots: tuple[int, ...]
    blocks: tuple[bytes, ...]

    @property
    def block_count(self) -> int:
        return len(self.tokens)

    def layout(self) -> tuple:
        return (self.key_id, self.bits, self.block_width)

    def to_bytes(self) -> bytes:
        w = Writer(TAG_ORE).raw(self.key_id).u8(self.bits).u8(self.block_width).raw(self.nonce)
        for tok, slot, blk in zip(self.tokens, self.slots, self.blocks):
            w.raw(tok).u16(slot).raw(blk)
        return w.finish()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "OreCipher":
        rd = Reader(buf, TAG_ORE)
        key_id = rd.raw(4)
        bits, width = rd.u8(), rd.u8()
        _check_layout(bits, width)
        nonce = rd.raw(NONCE_BYTES)
        n, row = bits // width, (1 << width) // 4
        tokens, slots, blocks = [], [], []
        for _ in range(n):
            tokens.append(rd.raw(TOKEN_BYTES))
            slots.append(rd.u16())
            blocks.append(rd.raw(row))
        rd.done()
        return cls(key_id, bits, width, nonce, tuple(tokens), tuple(slots), tuple(blocks))


def _check_layout(bits: int, width: int) -> None:
    if width not in (2, 4, 8) or bits % width or not 0 < bits <= 64:
        raise LayoutMismatch(f"unsupported layout bits={bits} block_width={width}")


def ore_encode_signed(v: int, bits: int = DEFAULT_BITS) -> int:
    """Order-preserving offset of a signed value into the unsigned domain."""
    u = v + (1 << (bits - 1))
    if not 0 <= u < (1 << bits):
        raise OreRangeError(f"{v} does not fit a signed {bits}-bit ORE domain")
    return u


def ore_encrypt(m: int, key: ColumnKey, bits: int = DEFAULT_BITS,
                block_width: int = DEFAULT_BLOCK_WIDTH, nonce: bytes | None = None) -> OreCipher:
    key.require(Scheme.ORE)
    _check_layout(bits, block_width)
    if not 0 <= m < (1 << bits):
        raise OreRangeError(f"{m} outside the {bits}-bit ORE domain")
    n = bits // block_width
    slots = 1 << block_width
    mask = slots - 1
    shifts = [bits - (i + 1) * block_width for i in range(n)]
    digits = np.array([(m >> s) & mask for s in shifts], dtype=np.int64)
    prefixes = np.array([m >> (s + block_width) if i else 0 for i, s in enumerate(shifts)],
                        dtype="<u8")

    inp = _template(n, block_width).copy()
    inp[:, :, :, 2:10] = prefixes.view(np.uint8).reshape(n, 8)[None, :, None, :]
    out = np.frombuffer(_ecb(key.key_bytes).update(inp.tobytes()), dtype=np.uint8)
    out = out.reshape(2, n, slots, 16)
    tok = out[0]
    order = np.argsort(out[1, :, :, :8].copy().view("<u8")[:, :, 0], axis=1, kind="stable")
    perm = np.empty_like(order)
    np.put_along_axis(perm, order, np.arange(slots)[None, :], axis=1)

    r = secrets.token_bytes(NONCE_BYTES) if nonce is None else nonce
    masked = tok ^ np.frombuffer(r, dtype=np.uint8)
    h = _fixed_hash_many(masked.reshape(-1, 16)).reshape(n, slots)
    j = np.arange(slots)[None, :]
    d = digits[:, None]
    cmp = np.where(j > d, 1, np.where(j < d, 2, 0))
    trits = (cmp + h) % 3
    by_slot = np.take_along_axis(trits, order, axis=1).astype(np.uint8)
    packed = (by_slot.reshape(n, slots // 4, 4) << np.array([0, 2, 4, 6], dtype=np.uint8)).sum(
        axis=2, dtype=np.uint8)

    idx = np.arange(n)
    tokens = tuple(bytes(t) for t in tok[idx, digits])
    slot_ids = tuple(int(s) for s in perm[idx, digits])
    return OreCipher(key.key_id, bits, block_width, r, tokens, slot_ids,
                     tuple(bytes(p) for p in packed))


def ore_compare(a: OreCipher, b: OreCipher) -> Ordering:
    if a.key_id != b.key_id or a.bits != b.bits or a.block_width != b.block_width:
        raise LayoutMismatch("ciphertexts come from different keys or layouts")
    ta, tb = a.tokens, b.tokens
    for i in range(len(ta)):
        if ta[i] != tb[i]:
            break
    else:
        return Ordering.EQUAL
    u = a.slots[i]
    trit = (b.blocks[i][u >> 2] >> ((u & 3) << 1)) & 3
    res = (trit - _fixed_hash_one(ta[i], b.nonce)) % 3
    if res == 1:
        return Ordering.GREATER
    if res == 2:
        return Ordering.LESS
    raise LayoutMismatch("inconsistent comparison trit (corrupted ciphertext?)")
