from .attestation import (AttestationOutcome, AttestationSession, EpidRegistry, Phase, Platform,
                          ProtocolError, ReplayedEpid, Transport, attest_and_provision)
from .bridge import BridgeOp, BridgeTask, Enclave, Operand, ResultTag
from .cache import LruCache
from .clock import VirtualClock
from .config import DESK, FULL_EPC, EnclaveConfig, VirtualCosts
from .pool import PoolStopped, TaskPool
from .probe import ProbeHistory, ProbeKind, ProbeSample, run_probe, unpaged_duration
from .sealing import SealError, seal_keys, unseal_keys
from .state import AuditFailure, EnclaveState, KeysNotProvisioned

__all__ = [n for n in dir() if not n.startswith("_")]
