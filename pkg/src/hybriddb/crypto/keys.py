"""Master and per-column key material."""
from __future__ import annotations

import enum
import hashlib
import secrets
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

KEY_BYTES = 32


class Scheme(str, enum.Enum):
    AHE = "ahe"
    MHE = "mhe"
    ORE = "ore"
    DET = "det"
    RND = "rnd"

    def __str__(self) -> str:
        return self.value


class SchemeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MasterKey:
    secret: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.secret) != KEY_BYTES:
            raise ValueError(f"master key must be {KEY_BYTES} bytes, got {len(self.secret)}")

    @classmethod
    def generate(cls) -> "MasterKey":
        return cls(secrets.token_bytes(KEY_BYTES))


@dataclass(frozen=True)
class ColumnKey:
    scheme: Scheme
    key_bytes: bytes = field(repr=False)
    column_label: bytes

    @property
    def key_id(self) -> bytes:
        """Short public fingerprint; lets ciphertexts detect key-lineage mismatches."""
        return hashlib.blake2b(self.key_bytes, digest_size=4, person=b"keyid").digest()

    def require(self, scheme: Scheme) -> None:
        if self.scheme is not scheme:
            raise SchemeMismatch(f"expected a {scheme.value} key, got {self.scheme.value}")


def derive_column_key(master: MasterKey, label: bytes | str, scheme: Scheme) -> ColumnKey:
    """HKDF-SHA256 expand of the master key, domain-separated by scheme and label."""
    if isinstance(label, str):
        label = label.encode()
    if not label:
        raise ValueError("column label must be non-empty")
    scheme = Scheme(scheme)
    info = b"hybriddb/col/v1|" + scheme.value.encode() + b"|" + label
    okm = HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None, info=info).derive(master.secret)
    return ColumnKey(scheme, okm, label)
