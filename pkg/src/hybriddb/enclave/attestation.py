"""Remote attestation and key provisioning, modelled on the SGX flow.

Message order (client = data owner holding the master key)::

    0 client  -> enclave   INIT      client nonce
    1 enclave -> client    MSG0      extended EPID group id
    2 client  -> enclave   MSG0_ACK  status, echoed EPID
    3 enclave -> client    MSG1      Ga
    4 client  -> enclave   MSG2      Gb, client signature over Gb||Ga, CMAC_MK
    5 enclave -> client    MSG3      Ga, quote, CMAC_MK
    6 client  -> enclave   MSG4      status, master key under AES-GCM with SK

Keys follow the SGX derivation: KDK = CMAC(0^16, DH x-coordinate), then
MK/SK/VK = CMAC(KDK, 0x01 || label || 0x00 || 0x80 0x00). The quote binds
SHA-256(Ga || Gb || VK || client nonce) and is signed by a test quoting key
that a stub verifier trusts. Every message is integrity-checked somewhere, so
any corrupted byte ends the session with no key provisioned.
"""
from __future__ import annotations

import enum
import hashlib
import secrets
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import algorithms
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.cmac import CMAC
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from ..crypto import MasterKey
from .state import EnclaveState

CURVE = ec.SECP256R1()
POINT_BYTES = 65
NONCE_BYTES = 16
EPID_BYTES = 4
MAC_BYTES = 16
GCM_NONCE = 12
STATUS_OK = 0


class ProtocolError(Exception):
    pass


class ReplayedEpid(ProtocolError):
    pass


class MsgType(enum.IntEnum):
    INIT = 0x10
    MSG0 = 0x11
    MSG0_ACK = 0x12
    MSG1 = 0x13
    MSG2 = 0x14
    MSG3 = 0x15
    MSG4 = 0x16


class Phase(enum.IntEnum):
    INIT = 0
    MSG0 = 1
    MSG1 = 2
    MSG2 = 3
    MSG3 = 4
    ATTESTED = 5
    FAILED = 6


def frame(kind: MsgType, payload: bytes) -> bytes:
    return struct.pack("<BI", kind, len(payload)) + payload


def unframe(buf: bytes, expected: MsgType) -> bytes:
    if len(buf) < 5:
        raise ProtocolError("short frame")
    kind, n = struct.unpack_from("<BI", buf)
    if kind != expected:
        raise ProtocolError(f"expected {expected.name}, got type {kind:#x}")
    if n != len(buf) - 5:
        raise ProtocolError("frame length mismatch")
    return buf[5:]


def _split(payload: bytes, *sizes: int) -> list[bytes]:
    if sum(sizes) > len(payload):
        raise ProtocolError("truncated payload")
    out, pos = [], 0
    for s in sizes:
        out.append(payload[pos:pos + s])
        pos += s
    out.append(payload[pos:])
    return out


def _blob(b: bytes) -> bytes:
    return struct.pack("<H", len(b)) + b


def _read_blob(buf: bytes) -> tuple[bytes, bytes]:
    if len(buf) < 2:
        raise ProtocolError("truncated blob")
    (n,) = struct.unpack_from("<H", buf)
    if len(buf) < 2 + n:
        raise ProtocolError("truncated blob")
    return buf[2:2 + n], buf[2 + n:]


def cmac(key: bytes, data: bytes) -> bytes:
    c = CMAC(algorithms.AES(key))
    c.update(data)
    return c.finalize()


def cmac_verify(key: bytes, data: bytes, tag: bytes) -> None:
    c = CMAC(algorithms.AES(key))
    c.update(data)
    try:
        c.verify(tag)
    except InvalidSignature:
        raise ProtocolError("CMAC verification failed") from None


def _point(pub: ec.EllipticCurvePublicKey) -> bytes:
    return pub.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def _load_point(b: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, b)
    except ValueError:
        raise ProtocolError("invalid curve point") from None


def derive_session_keys(priv: ec.EllipticCurvePrivateKey, peer: ec.EllipticCurvePublicKey):
    shared = priv.exchange(ec.ECDH(), peer)
    kdk = cmac(bytes(16), shared[::-1])
    return {lbl: cmac(kdk, b"\x01" + lbl.encode() + b"\x00\x80\x00") for lbl in ("MK", "SK", "VK")}


@dataclass
class AttestationSession:
    phase: Phase = Phase.INIT
    epid: bytes | None = None
    ga: bytes | None = None
    gb: bytes | None = None
    dh_key: bytes | None = None
    mk: bytes | None = field(default=None, repr=False)
    sk: bytes | None = field(default=None, repr=False)
    vk: bytes | None = field(default=None, repr=False)
    quote: bytes | None = None
    error: str | None = None

    def advance(self, to: Phase) -> None:
        if self.phase is Phase.FAILED or to <= self.phase:
            raise ProtocolError(f"illegal transition {self.phase.name} -> {to.name}")
        self.phase = to

    def set_keys(self, keys: dict[str, bytes]) -> None:
        if self.ga is None or self.gb is None:
            raise ProtocolError("session keys need both DH halves")
        self.mk, self.sk, self.vk = keys["MK"], keys["SK"], keys["VK"]

    def fail(self, err: str) -> None:
        self.phase = Phase.FAILED
        self.error = err
        self.mk = self.sk = self.vk = None


@dataclass(frozen=True)
class Quote:
    epid: bytes
    mrenclave: bytes
    report_data: bytes
    signature: bytes

    def body(self) -> bytes:
        return self.epid + self.mrenclave + self.report_data

    def to_bytes(self) -> bytes:
        return self.body() + _blob(self.signature)

    @classmethod
    def from_bytes(cls, b: bytes) -> "Quote":
        epid, mr, rd, rest = _split(b, EPID_BYTES, 32, 32)
        sig, tail = _read_blob(rest)
        if tail:
            raise ProtocolError("trailing bytes after quote")
        return cls(epid, mr, rd, sig)


class StubVerifier:
    """Stands in for the attestation service: trusts quotes from one test key."""

    def __init__(self, quoting_public: ec.EllipticCurvePublicKey, expected_mrenclave: bytes):
        self.quoting_public = quoting_public
        self.expected_mrenclave = expected_mrenclave

    def verify(self, q: Quote) -> None:
        try:
            self.quoting_public.verify(q.signature, q.body(), ec.ECDSA(hashes.SHA256()))
        except InvalidSignature:
            raise ProtocolError("quote signature rejected") from None
        if q.mrenclave != self.expected_mrenclave:
            raise ProtocolError("unexpected enclave measurement")


@dataclass
class Platform:
    """The simulated hardware: EPID group, quoting key, measurement, sealing secret."""
    epid: bytes
    quoting_key: ec.EllipticCurvePrivateKey
    mrenclave: bytes
    sealing_secret: bytes = field(repr=False)

    @classmethod
    def create(cls, quoting_key: ec.EllipticCurvePrivateKey | None = None,
               mrenclave: bytes | None = None) -> "Platform":
        return cls(secrets.token_bytes(EPID_BYTES), quoting_key or ec.generate_private_key(CURVE),
                   mrenclave or hashlib.sha256(b"hybriddb-enclave").digest(),
                   secrets.token_bytes(32))

    def verifier(self) -> StubVerifier:
        return StubVerifier(self.quoting_key.public_key(), self.mrenclave)


class EpidRegistry:
    def __init__(self):
        self._seen: set[bytes] = set()

    def register(self, epid: bytes) -> None:
        if epid in self._seen:
            raise ReplayedEpid("EPID already registered; terminating")
        self._seen.add(epid)


def report_data(ga: bytes, gb: bytes, vk: bytes, nonce: bytes) -> bytes:
    return hashlib.sha256(ga + gb + vk + nonce).digest()


class EnclaveAttestor:
    def __init__(self, state: EnclaveState, platform: Platform,
                 client_public: ec.EllipticCurvePublicKey):
        self.state = state
        self.platform = platform
        self.client_public = client_public
        self.session = AttestationSession(epid=platform.epid)
        self._priv: ec.EllipticCurvePrivateKey | None = None
        self._nonce = b""

    def on_init(self, msg: bytes) -> bytes:
        nonce = unframe(msg, MsgType.INIT)
        if len(nonce) != NONCE_BYTES:
            raise ProtocolError("bad client nonce")
        self._nonce = nonce
        self.session.advance(Phase.MSG0)
        return frame(MsgType.MSG0, self.platform.epid)

    def on_ack(self, msg: bytes) -> bytes:
        status, echo, rest = _split(unframe(msg, MsgType.MSG0_ACK), 1, EPID_BYTES)
        if status[0] != STATUS_OK or echo != self.platform.epid or rest:
            raise ProtocolError("EPID not accepted by client")
        self._priv = ec.generate_private_key(CURVE)
        self.session.ga = _point(self._priv.public_key())
        self.session.advance(Phase.MSG1)
        return frame(MsgType.MSG1, self.session.ga)

    def on_msg2(self, msg: bytes) -> bytes:
        s = self.session
        gb, rest = _split(unframe(msg, MsgType.MSG2), POINT_BYTES)
        sig, rest = _read_blob(rest)
        mac, tail = _split(rest, MAC_BYTES)
        if tail:
            raise ProtocolError("trailing bytes in msg2")
        try:
            self.client_public.verify(sig, gb + s.ga, ec.ECDSA(hashes.SHA256()))
        except InvalidSignature:
            raise ProtocolError("client signature over Gb||Ga rejected") from None
        s.gb = gb
        peer = _load_point(gb)
        s.dh_key = self._priv.exchange(ec.ECDH(), peer)
        s.set_keys(derive_session_keys(self._priv, peer))
        cmac_verify(s.mk, gb + _blob(sig), mac)
        s.advance(Phase.MSG2)
        p = self.platform
        rd = report_data(s.ga, s.gb, s.vk, self._nonce)
        body = p.epid + p.mrenclave + rd
        q = Quote(p.epid, p.mrenclave, rd, p.quoting_key.sign(body, ec.ECDSA(hashes.SHA256())))
        s.quote = q.to_bytes()
        s.advance(Phase.MSG3)
        payload = s.ga + _blob(s.quote)
        return frame(MsgType.MSG3, payload + cmac(s.mk, payload))

    def on_msg4(self, msg: bytes) -> None:
        s = self.session
        status, nonce, ct = _split(unframe(msg, MsgType.MSG4), 1, GCM_NONCE)
        if status[0] != STATUS_OK:
            raise ProtocolError("client rejected attestation")
        try:
            secret = AESGCM(s.sk).decrypt(nonce, ct, status + self.platform.epid)
        except InvalidTag:
            raise ProtocolError("provisioning payload failed authentication") from None
        master = MasterKey(secret)
        s.advance(Phase.ATTESTED)
        self.state.provision(master)
        self.state.session = s


class ClientAttestor:
    def __init__(self, master: MasterKey, signing_key: ec.EllipticCurvePrivateKey,
                 verifier: StubVerifier, registry: EpidRegistry):
        self.master = master
        self.signing_key = signing_key
        self.verifier = verifier
        self.registry = registry
        self.session = AttestationSession()
        self._nonce = secrets.token_bytes(NONCE_BYTES)
        self._priv: ec.EllipticCurvePrivateKey | None = None
        self.provisioned = False

    def init(self) -> bytes:
        return frame(MsgType.INIT, self._nonce)

    def on_msg0(self, msg: bytes) -> bytes:
        epid = unframe(msg, MsgType.MSG0)
        if len(epid) != EPID_BYTES:
            raise ProtocolError("bad EPID length")
        self.registry.register(epid)
        self.session.epid = epid
        self.session.advance(Phase.MSG0)
        return frame(MsgType.MSG0_ACK, bytes([STATUS_OK]) + epid)

    def on_msg1(self, msg: bytes) -> bytes:
        s = self.session
        ga = unframe(msg, MsgType.MSG1)
        peer = _load_point(ga)
        s.ga = ga
        s.advance(Phase.MSG1)
        self._priv = ec.generate_private_key(CURVE)
        s.gb = _point(self._priv.public_key())
        s.dh_key = self._priv.exchange(ec.ECDH(), peer)
        s.set_keys(derive_session_keys(self._priv, peer))
        sig = self.signing_key.sign(s.gb + ga, ec.ECDSA(hashes.SHA256()))
        body = s.gb + _blob(sig)
        s.advance(Phase.MSG2)
        return frame(MsgType.MSG2, body + cmac(s.mk, body))

    def on_msg3(self, msg: bytes) -> bytes:
        s = self.session
        payload = unframe(msg, MsgType.MSG3)
        if len(payload) < MAC_BYTES:
            raise ProtocolError("truncated msg3")
        body, mac = payload[:-MAC_BYTES], payload[-MAC_BYTES:]
        cmac_verify(s.mk, body, mac)
        ga, rest = _split(body, POINT_BYTES)
        qb, tail = _read_blob(rest)
        if ga != s.ga or tail:
            raise ProtocolError("msg3 does not match msg1")
        q = Quote.from_bytes(qb)
        self.verifier.verify(q)
        if q.epid != s.epid:
            raise ProtocolError("quote EPID differs from msg0")
        if q.report_data != report_data(s.ga, s.gb, s.vk, self._nonce):
            raise ProtocolError("quote not bound to this session")
        s.quote = qb
        s.advance(Phase.MSG3)
        status = bytes([STATUS_OK])
        nonce = secrets.token_bytes(GCM_NONCE)
        ct = AESGCM(s.sk).encrypt(nonce, self.master.secret, status + s.epid)
        s.advance(Phase.ATTESTED)
        self.provisioned = True
        return frame(MsgType.MSG4, status + nonce + ct)


class Transport:
    """In-process duplex channel; counts messages and can corrupt one of them."""

    def __init__(self, tamper_index: int | None = None, tamper_bit: int | None = None,
                 rng: secrets.SystemRandom | None = None):
        self.tamper_index = tamper_index
        self.tamper_bit = tamper_bit
        self.rng = rng or secrets.SystemRandom()
        self.log: list[bytes] = []
        self.tampered_at: tuple[int, int] | None = None

    def deliver(self, msg: bytes) -> bytes:
        i = len(self.log)
        if i == self.tamper_index:
            bit = self.tamper_bit if self.tamper_bit is not None else self.rng.randrange(len(msg) * 8)
            bit %= len(msg) * 8
            b = bytearray(msg)
            b[bit // 8] ^= 1 << (bit % 8)
            msg = bytes(b)
            self.tampered_at = (i, bit)
        self.log.append(msg)
        return msg


MESSAGE_COUNT = 7


@dataclass
class AttestationOutcome:
    ok: bool
    client: AttestationSession
    enclave: AttestationSession
    error: str | None = None


def attest_and_provision(master: MasterKey, state: EnclaveState, platform: Platform | None = None,
                         transport: Transport | None = None, registry: EpidRegistry | None = None,
                         signing_key: ec.EllipticCurvePrivateKey | None = None) -> AttestationOutcome:
    """Run the whole exchange; on any failure both sides end Failed and the enclave holds no keys."""
    platform = platform or Platform.create()
    transport = transport or Transport()
    signing_key = signing_key or ec.generate_private_key(CURVE)
    client = ClientAttestor(master, signing_key, platform.verifier(), registry or EpidRegistry())
    enclave = EnclaveAttestor(state, platform, signing_key.public_key())
    t = transport.deliver
    try:
        m = enclave.on_init(t(client.init()))
        m = enclave.on_ack(t(client.on_msg0(t(m))))
        m = enclave.on_msg2(t(client.on_msg1(t(m))))
        enclave.on_msg4(t(client.on_msg3(t(m))))
    except (ProtocolError, ValueError) as e:
        err = f"{type(e).__name__}: {e}"
        client.session.fail(err)
        enclave.session.fail(err)
        client.provisioned = False
        state.wipe()
        return AttestationOutcome(False, client.session, enclave.session, err)
    return AttestationOutcome(True, client.session, enclave.session)
