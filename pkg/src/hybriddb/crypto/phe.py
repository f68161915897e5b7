"""Symmetric additive / multiplicative homomorphic encryption.

Both schemes mask the plaintext with a keyed PRF of a fresh 64-bit nonce:

    additive:        c = (m + F_k(r)) mod n
    multiplicative:  c = (m * F_k(r)) mod n

Combining ciphertexts combines masks, so a ciphertext carries the multiset of
nonces whose masks must be removed on decryption. The size of that multiset
(the number of rows that produced a value) is exactly what the server learns.
"""
from __future__ import annotations

import hashlib
import secrets
from collections import Counter
from dataclasses import dataclass

from .keys import ColumnKey, Scheme
from .wire import TAG_AHE, TAG_MHE, Reader, Writer

#: largest prime below 2**128; every non-zero residue is invertible
MODULUS = 2**128 - 159
MODULUS_ID = 1

_MODULI = {MODULUS_ID: MODULUS}


class ModulusMismatch(ValueError):
    pass


class NonInvertible(ArithmeticError):
    pass


def prf(key: ColumnKey, nonce: int) -> int:
    """128-bit keyed PRF (BLAKE2b-MAC) reduced mod n."""
    d = hashlib.blake2b(nonce.to_bytes(8, "little"), key=key.key_bytes, digest_size=16,
                        person=key.scheme.value.encode()).digest()
    return int.from_bytes(d, "little") % MODULUS


def _mhe_mask(key: ColumnKey, nonce: int) -> int:
    return prf(key, nonce) or 1


def fresh_nonce() -> int:
    return secrets.randbits(64)


def encode_signed(v: int, n: int = MODULUS) -> int:
    """Map a signed integer into Z_n (negatives wrap to the top half)."""
    if not -(n // 2) <= v <= n // 2:
        raise OverflowError(f"{v} does not fit the homomorphic plaintext space")
    return v % n


def decode_signed(x: int, n: int = MODULUS) -> int:
    return x - n if x > n // 2 else x


def _check_range(m: int, n: int) -> None:
    if not 0 <= m < n:
        raise ValueError(f"plaintext {m} outside Z_n")


@dataclass(frozen=True, slots=True)
class AheCipher:
    masked_sum: int
    nonces: tuple[int, ...]
    negated: tuple[int, ...] = ()
    modulus_id: int = MODULUS_ID

    @property
    def cardinality(self) -> int:
        return len(self.nonces) + len(self.negated)

    def to_bytes(self) -> bytes:
        w = Writer(TAG_AHE).u8(self.modulus_id).u128(self.masked_sum)
        w.u32(len(self.nonces))
        for r in self.nonces:
            w.u64(r)
        w.u32(len(self.negated))
        for r in self.negated:
            w.u64(r)
        return w.finish()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "AheCipher":
        rd = Reader(buf, TAG_AHE)
        mid = rd.u8()
        masked = rd.u128()
        pos = tuple(rd.u64() for _ in range(rd.u32()))
        neg = tuple(rd.u64() for _ in range(rd.u32()))
        rd.done()
        return cls(masked, pos, neg, mid)


@dataclass(frozen=True, slots=True)
class MheCipher:
    masked_product: int
    nonces: tuple[int, ...]
    negated: tuple[int, ...] = ()
    modulus_id: int = MODULUS_ID

    @property
    def cardinality(self) -> int:
        return len(self.nonces) + len(self.negated)

    def to_bytes(self) -> bytes:
        w = Writer(TAG_MHE).u8(self.modulus_id).u128(self.masked_product)
        w.u32(len(self.nonces))
        for r in self.nonces:
            w.u64(r)
        w.u32(len(self.negated))
        for r in self.negated:
            w.u64(r)
        return w.finish()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "MheCipher":
        rd = Reader(buf, TAG_MHE)
        mid = rd.u8()
        masked = rd.u128()
        pos = tuple(rd.u64() for _ in range(rd.u32()))
        neg = tuple(rd.u64() for _ in range(rd.u32()))
        rd.done()
        return cls(masked, pos, neg, mid)


def _modulus(mid: int) -> int:
    try:
        return _MODULI[mid]
    except KeyError:
        raise ModulusMismatch(f"unknown modulus id {mid}") from None


def _same_modulus(a, b) -> int:
    if a.modulus_id != b.modulus_id:
        raise ModulusMismatch(f"modulus {a.modulus_id} vs {b.modulus_id}")
    return _modulus(a.modulus_id)


# -- additive ---------------------------------------------------------------

def sahe_encrypt(m: int, key: ColumnKey, nonce: int | None = None) -> AheCipher:
    key.require(Scheme.AHE)
    _check_range(m, MODULUS)
    r = fresh_nonce() if nonce is None else nonce
    return AheCipher((m + prf(key, r)) % MODULUS, (r,))


def _mask_total(key: ColumnKey, nonces: tuple[int, ...]) -> int:
    if len(nonces) == 1:
        return prf(key, nonces[0])
    return sum(prf(key, r) * k for r, k in Counter(nonces).items())


def sahe_decrypt(c: AheCipher, key: ColumnKey) -> int:
    key.require(Scheme.AHE)
    n = _modulus(c.modulus_id)
    return (c.masked_sum - _mask_total(key, c.nonces) + _mask_total(key, c.negated)) % n


def sahe_add(a: AheCipher, b: AheCipher) -> AheCipher:
    n = _same_modulus(a, b)
    return AheCipher((a.masked_sum + b.masked_sum) % n, a.nonces + b.nonces,
                     a.negated + b.negated, a.modulus_id)


def sahe_sub(a: AheCipher, b: AheCipher) -> AheCipher:
    n = _same_modulus(a, b)
    return AheCipher((a.masked_sum - b.masked_sum) % n, a.nonces + b.negated,
                     a.negated + b.nonces, a.modulus_id)


def sahe_add_plain(a: AheCipher, p: int) -> AheCipher:
    n = _modulus(a.modulus_id)
    return AheCipher((a.masked_sum + p) % n, a.nonces, a.negated, a.modulus_id)


# -- multiplicative ---------------------------------------------------------

def smhe_encrypt(m: int, key: ColumnKey, nonce: int | None = None) -> MheCipher:
    key.require(Scheme.MHE)
    _check_range(m, MODULUS)
    r = fresh_nonce() if nonce is None else nonce
    return MheCipher((m * _mhe_mask(key, r)) % MODULUS, (r,))


def _mask_product(key: ColumnKey, nonces: tuple[int, ...], n: int) -> int:
    acc = 1
    for r, k in Counter(nonces).items():
        acc = acc * pow(_mhe_mask(key, r), k, n) % n
    return acc


def smhe_decrypt(c: MheCipher, key: ColumnKey) -> int:
    key.require(Scheme.MHE)
    n = _modulus(c.modulus_id)
    pos = _mask_product(key, c.nonces, n)
    neg = _mask_product(key, c.negated, n)
    return c.masked_product * pow(pos, -1, n) * neg % n


def smhe_mul(a: MheCipher, b: MheCipher) -> MheCipher:
    n = _same_modulus(a, b)
    return MheCipher(a.masked_product * b.masked_product % n, a.nonces + b.nonces,
                     a.negated + b.negated, a.modulus_id)


def smhe_div(a: MheCipher, b: MheCipher) -> MheCipher:
    """Quotient in Z_n; equals integer division only when the divisor divides exactly."""
    n = _same_modulus(a, b)
    if b.masked_product % n == 0:
        raise NonInvertible("divisor encrypts zero")
    inv = pow(b.masked_product, -1, n)
    return MheCipher(a.masked_product * inv % n, a.nonces + b.negated,
                     a.negated + b.nonces, a.modulus_id)


def smhe_mul_plain(a: MheCipher, p: int) -> MheCipher:
    n = _modulus(a.modulus_id)
    return MheCipher(a.masked_product * (p % n) % n, a.nonces, a.negated, a.modulus_id)
