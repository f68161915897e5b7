"""Enclave parameters and the virtual cost table (all costs in microseconds)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

MB = 1 << 20
KB = 1 << 10


@dataclass(frozen=True)
class VirtualCosts:
    plain_op: float = 0.05
    row_fetch: float = 0.3
    det_eq: float = 0.4
    ore_compare: float = 16.0
    ahe_add: float = 1.5
    mhe_mul: float = 2.5
    # client-side encryption of one value, by scheme
    enc_ore: float = 55.0
    enc_ahe: float = 1.0
    enc_mhe: float = 1.2
    enc_det: float = 1.5
    enc_rnd: float = 1.5
    client_decrypt: float = 1.5
    # fixed latency of an extra client/server exchange
    round_trip: float = 50.0
    # inside the enclave
    tee_decrypt: float = 1.5
    tee_cache_hit: float = 0.1
    tee_compute: float = 0.05
    memory_copy: float = 0.3
    decide_unit: float = 0.05
    # probe work per element-step (sort and search)
    probe_step: float = 0.005

    def encrypt(self, scheme) -> float:
        return getattr(self, f"enc_{scheme.value}")


@dataclass(frozen=True)
class EnclaveConfig:
    epc_budget_bytes: int = 8 * MB
    ecall_fixed_cost_micros: float = 6.0
    # duration multiplier once resident memory reaches twice the budget;
    # the penalty grows linearly with the overflow fraction
    page_fault_penalty_factor: float = 2.0
    cache_capacity_entries: int = 4096
    cache_entry_bytes: int = 64
    pool_batch_size: int = 25
    pool_window_micros: float = 20.0
    pool_capacity: int = 1024
    worker_count: int = 4
    base_resident_bytes: int = 2 * MB
    # enclave buffers pinned by each connected session (32 sessions: 26 MB resident)
    session_working_set_bytes: int = 768 * KB
    costs: VirtualCosts = field(default_factory=VirtualCosts)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if self.page_fault_penalty_factor < 1:
            raise ValueError("page_fault_penalty_factor must be >= 1")
        if self.base_resident_bytes >= self.epc_budget_bytes:
            raise ValueError("base resident set must fit inside the EPC budget")

    @property
    def penalty_slope(self) -> float:
        return self.page_fault_penalty_factor - 1.0

    def paging_factor(self, resident_bytes: int) -> float:
        over = max(0, resident_bytes - self.epc_budget_bytes)
        return 1.0 + self.penalty_slope * over / self.epc_budget_bytes

    def with_(self, **kw) -> "EnclaveConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnclaveConfig":
        d = dict(d)
        costs = VirtualCosts(**d.pop("costs", {}))
        return cls(costs=costs, **d)


DESK = EnclaveConfig()
#: a 128 MB EPC, the size on common server parts
FULL_EPC = EnclaveConfig(epc_budget_bytes=128 * MB)
