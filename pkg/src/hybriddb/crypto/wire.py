"""Binary framing shared by every ciphertext type.

Layout: ``version:u8 | type:u8 | body``. Integers are little-endian; variable
fields carry a ``u32`` length prefix.
"""
from __future__ import annotations

import struct

VERSION = 1

TAG_AHE = 0x01
TAG_MHE = 0x02
TAG_ORE = 0x03
TAG_DET = 0x04
TAG_RND = 0x05


class MalformedCiphertext(ValueError):
    pass


class Writer:
    __slots__ = ("_parts",)

    def __init__(self, tag: int):
        self._parts = [bytes((VERSION, tag))]

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<B", v))
        return self

    def u16(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<H", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<I", v))
        return self

    def i32(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<i", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack("<Q", v))
        return self

    def u128(self, v: int) -> "Writer":
        self._parts.append(v.to_bytes(16, "little"))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def blob(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack("<I", len(b)))
        self._parts.append(b)
        return self

    def finish(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes, tag: int):
        if len(buf) < 2:
            raise MalformedCiphertext("truncated header")
        if buf[0] != VERSION:
            raise MalformedCiphertext(f"unsupported version {buf[0]}")
        if buf[1] != tag:
            raise MalformedCiphertext(f"type tag {buf[1]:#x}, expected {tag:#x}")
        self._buf = buf
        self._pos = 2

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._buf):
            raise MalformedCiphertext("truncated body")
        out = self._buf[self._pos:end]
        self._pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def u128(self) -> int:
        return int.from_bytes(self._take(16), "little")

    def raw(self, n: int) -> bytes:
        return bytes(self._take(n))

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise MalformedCiphertext(f"{len(self._buf) - self._pos} trailing bytes")
