"""Deterministic (AES-SIV) and randomized authenticated (AES-GCM) encryption."""
from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, AESSIV

from .keys import ColumnKey, Scheme
from .wire import TAG_DET, TAG_RND, Reader, Writer

GCM_NONCE = 12
GCM_TAG = 16


class AuthenticationError(ValueError):
    pass


_tls = threading.local()


def _aead(key: ColumnKey):
    cache = getattr(_tls, "aead", None)
    if cache is None:
        cache = _tls.aead = {}
    obj = cache.get(key.key_bytes)
    if obj is None:
        if len(cache) > 4096:
            cache.clear()
        obj = AESSIV(key.key_bytes) if key.scheme is Scheme.DET else AESGCM(key.key_bytes)
        cache[key.key_bytes] = obj
    return obj


@dataclass(frozen=True, slots=True)
class DetCipher:
    data: bytes

    def to_bytes(self) -> bytes:
        return Writer(TAG_DET).blob(self.data).finish()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "DetCipher":
        rd = Reader(buf, TAG_DET)
        data = rd.blob()
        rd.done()
        if len(data) < 16:
            raise AuthenticationError("deterministic ciphertext shorter than its SIV")
        return cls(data)


@dataclass(frozen=True, slots=True)
class RndCipher:
    nonce: bytes
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return Writer(TAG_RND).raw(self.nonce).blob(self.body).raw(self.tag).finish()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "RndCipher":
        rd = Reader(buf, TAG_RND)
        nonce = rd.raw(GCM_NONCE)
        body = rd.blob()
        tag = rd.raw(GCM_TAG)
        rd.done()
        return cls(nonce, body, tag)


def det_encrypt(m: bytes, key: ColumnKey) -> DetCipher:
    key.require(Scheme.DET)
    return DetCipher(_aead(key).encrypt(m, [key.column_label]))


def det_decrypt(c: DetCipher, key: ColumnKey) -> bytes:
    key.require(Scheme.DET)
    try:
        return _aead(key).decrypt(c.data, [key.column_label])
    except InvalidTag:
        raise AuthenticationError("deterministic ciphertext failed authentication") from None


def rnd_encrypt(m: bytes, key: ColumnKey, nonce: bytes | None = None) -> RndCipher:
    key.require(Scheme.RND)
    iv = secrets.token_bytes(GCM_NONCE) if nonce is None else nonce
    out = _aead(key).encrypt(iv, m, key.column_label)
    return RndCipher(iv, out[:-GCM_TAG], out[-GCM_TAG:])


def rnd_decrypt(c: RndCipher, key: ColumnKey) -> bytes:
    key.require(Scheme.RND)
    try:
        return _aead(key).decrypt(c.nonce, c.body + c.tag, key.column_label)
    except InvalidTag:
        raise AuthenticationError("randomized ciphertext failed authentication") from None
