"""Sealed key file so a restarted enclave can recover keys without re-attesting.

Layout: ``b"HDBSEAL"`` | version u8 | nonce (12) | AES-GCM(master key) with the
16-byte integrity tag appended. The header is authenticated as associated data.
The sealing key is derived from the platform's sealing secret and the enclave
measurement, so another enclave identity cannot open the file.
"""
from __future__ import annotations

import os
import secrets

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..crypto import MasterKey
from .attestation import Platform
from .state import EnclaveState, KeysNotProvisioned

MAGIC = b"HDBSEAL"
VERSION = 1


class SealError(ValueError):
    pass


def _seal_key(platform: Platform) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=platform.mrenclave,
                info=b"hybriddb/seal/v1").derive(platform.sealing_secret)


def seal_keys(state: EnclaveState, platform: Platform, path: str | os.PathLike) -> None:
    if state._master is None:
        raise KeysNotProvisioned("nothing to seal")
    header = MAGIC + bytes([VERSION])
    nonce = secrets.token_bytes(12)
    ct = AESGCM(_seal_key(platform)).encrypt(nonce, state._master.secret, header)
    with open(path, "wb") as fh:
        fh.write(header + nonce + ct)
    state.sealed = True


def unseal_keys(state: EnclaveState, platform: Platform, path: str | os.PathLike) -> None:
    with open(path, "rb") as fh:
        data = fh.read()
    header = MAGIC + bytes([VERSION])
    if not data.startswith(MAGIC) or len(data) < len(header) + 12 + 16:
        raise SealError("not a sealed key file")
    if data[len(MAGIC)] != VERSION:
        raise SealError(f"unsupported sealed file version {data[len(MAGIC)]}")
    nonce = data[len(header):len(header) + 12]
    try:
        secret = AESGCM(_seal_key(platform)).decrypt(nonce, data[len(header) + 12:], header)
    except InvalidTag:
        raise SealError("sealed key file failed integrity check") from None
    state.provision(MasterKey(secret))
    state.sealed = True
