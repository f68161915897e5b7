"""Plain value <-> per-scheme ciphertext for one column.

Integers (including fixed-point decimals already scaled) are signed; text
is UTF-8. ORE over text orders by the first ``bits / 8`` bytes only.
"""
from __future__ import annotations

from .keys import ColumnKey, Scheme
from .ore import DEFAULT_BITS, OreCipher, ore_encode_signed, ore_encrypt
from .phe import (AheCipher, MheCipher, decode_signed, encode_signed, sahe_decrypt,
                  sahe_encrypt, smhe_decrypt, smhe_encrypt)
from .symmetric import (DetCipher, RndCipher, det_decrypt, det_encrypt, rnd_decrypt,
                        rnd_encrypt)

INT_BYTES = 8


def int_to_bytes(v: int) -> bytes:
    return v.to_bytes(INT_BYTES, "big", signed=True)


def bytes_to_int(b: bytes) -> int:
    return int.from_bytes(b, "big", signed=True)


def to_bytes(v: int | str) -> bytes:
    return v.encode() if isinstance(v, str) else int_to_bytes(v)


def from_bytes(b: bytes, is_text: bool) -> int | str:
    return b.decode() if is_text else bytes_to_int(b)


def ore_domain_value(v: int | str, bits: int = DEFAULT_BITS) -> int:
    if isinstance(v, str):
        prefix = v.encode()[: bits // 8].ljust(bits // 8, b"\0")
        return int.from_bytes(prefix, "big")
    return ore_encode_signed(v, bits)


def encrypt_value(v: int | str, key: ColumnKey, ore_bits: int = DEFAULT_BITS):
    s = key.scheme
    if s is Scheme.DET:
        return det_encrypt(to_bytes(v), key)
    if s is Scheme.RND:
        return rnd_encrypt(to_bytes(v), key)
    if s is Scheme.ORE:
        return ore_encrypt(ore_domain_value(v, ore_bits), key, bits=ore_bits)
    if isinstance(v, str):
        raise TypeError(f"{s.value} needs an integer plaintext")
    if s is Scheme.AHE:
        return sahe_encrypt(encode_signed(v), key)
    return smhe_encrypt(encode_signed(v), key)


def decrypt_value(c, key: ColumnKey, is_text: bool = False) -> int | str:
    if isinstance(c, DetCipher):
        return from_bytes(det_decrypt(c, key), is_text)
    if isinstance(c, RndCipher):
        return from_bytes(rnd_decrypt(c, key), is_text)
    if isinstance(c, AheCipher):
        return decode_signed(sahe_decrypt(c, key))
    if isinstance(c, MheCipher):
        return decode_signed(smhe_decrypt(c, key))
    if isinstance(c, OreCipher):
        raise TypeError("ORE ciphertexts are comparison-only")
    raise TypeError(f"not a ciphertext: {type(c).__name__}")
