"""Trusted bridging functions.

A bridge call decrypts its operands inside the enclave, computes on the
plaintext and re-encrypts the result under the requested scheme. Only the
result (or a boolean for predicates) leaves.
"""
from __future__ import annotations

import enum
import itertools
import operator
from dataclasses import dataclass, field

from ..crypto import AheCipher, DetCipher, MheCipher, RndCipher, Scheme
from ..crypto.codec import decrypt_value, encrypt_value
from .state import EnclaveState, KeysNotProvisioned


class BridgeOp(str, enum.Enum):
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"
    EQ = "eq"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    CONVERT = "convert"
    ARITH_CMP = "arith_cmp"
    SUM = "sum"
    MIN = "min"
    MAX = "max"
    CMP = "cmp"


class ResultTag(str, enum.Enum):
    BOOL = "bool"
    RND = "rnd"
    AHE = "ahe"
    MHE = "mhe"
    DET = "det"
    ORE = "ore"
    # three-way sign of a comparison; reveals the same as an ORE comparison
    ORDER = "order"

    @property
    def scheme(self) -> Scheme:
        return Scheme(self.value)


COMPARE_OPS = {BridgeOp.LT: operator.lt, BridgeOp.LE: operator.le, BridgeOp.GT: operator.gt,
               BridgeOp.GE: operator.ge, BridgeOp.EQ: operator.eq}
SYMBOL_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
              "=": operator.eq, "!=": operator.ne, "+": operator.add, "-": operator.sub,
              "*": operator.mul}

_OPENABLE = {RndCipher: Scheme.RND, DetCipher: Scheme.DET, AheCipher: Scheme.AHE,
             MheCipher: Scheme.MHE}

_task_ids = itertools.count(1)
_UNSET = object()


@dataclass(frozen=True, slots=True)
class Operand:
    cipher: object
    label: str
    is_text: bool = False


@dataclass(eq=False)
class BridgeTask:
    op: BridgeOp
    result: ResultTag | tuple[ResultTag, ...]
    operands: tuple[Operand, ...]
    result_label: str | None = None
    # ARITH_CMP only: arithmetic symbol then comparison symbol
    arith: str | None = None
    cmp: str | None = None
    task_id: int = field(default_factory=lambda: next(_task_ids))
    value: object = field(default=_UNSET, repr=False)
    micros: float = 0.0
    direct: bool = False

    @property
    def done(self) -> bool:
        return self.value is not _UNSET

    def complete(self, value, micros: float) -> None:
        if self.done:
            raise RuntimeError(f"task {self.task_id} completed twice")
        self.value, self.micros = value, micros


class Enclave:
    """Entry points into the simulated enclave; every call returns virtual micros."""

    def __init__(self, state: EnclaveState):
        self.state = state
        self.entries = 0
        self.calls = 0

    @property
    def config(self):
        return self.state.config

    def _open(self, o: Operand) -> tuple[object, float]:
        st, costs = self.state, self.config.costs
        c = o.cipher
        scheme = _OPENABLE.get(type(c))
        if scheme is None:
            raise TypeError(f"enclave cannot open a {type(c).__name__}")
        key = st.column_key(o.label, scheme)
        if scheme is Scheme.RND and st.cache_enabled:
            v, hit = st.cache.get_or_load((o.label, c.nonce, c.tag),
                                          lambda: decrypt_value(c, key, o.is_text))
            return v, costs.tee_cache_hit if hit else costs.tee_decrypt
        return decrypt_value(c, key, o.is_text), costs.tee_decrypt

    def _compute(self, task: BridgeTask, vals: list):
        op = task.op
        if op in COMPARE_OPS:
            return COMPARE_OPS[op](vals[0], vals[1])
        if op is BridgeOp.ADD:
            return vals[0] + vals[1]
        if op is BridgeOp.SUB:
            return vals[0] - vals[1]
        if op is BridgeOp.MUL:
            return vals[0] * vals[1]
        if op is BridgeOp.CMP:
            return (vals[0] > vals[1]) - (vals[0] < vals[1])
        if op is BridgeOp.CONVERT:
            return vals[0]
        if op is BridgeOp.ARITH_CMP:
            return SYMBOL_OPS[task.cmp](SYMBOL_OPS[task.arith](vals[0], vals[1]), vals[2])
        if op is BridgeOp.SUM:
            return sum(vals)
        if op is BridgeOp.MIN:
            return min(vals)
        if op is BridgeOp.MAX:
            return max(vals)
        raise ValueError(f"unknown bridge op {op}")

    def _seal_result(self, task: BridgeTask, value) -> tuple[object, float]:
        tags = task.result if isinstance(task.result, tuple) else (task.result,)
        label = task.result_label or task.operands[0].label
        out, cost = {}, 0.0
        for tag in tags:
            if tag is ResultTag.BOOL:
                if not isinstance(value, bool):
                    raise TypeError("BOOL result requested for a non-predicate op")
                out[tag] = value
                continue
            if tag is ResultTag.ORDER:
                if task.op is not BridgeOp.CMP:
                    raise TypeError("ORDER result requested for a non-comparison op")
                out[tag] = value
                continue
            key = self.state.column_key(label, tag.scheme)
            out[tag] = encrypt_value(value, key)
            cost += self.config.costs.encrypt(tag.scheme)
        return (out if isinstance(task.result, tuple) else out[tags[0]]), cost

    def _body(self, task: BridgeTask) -> tuple[object, float]:
        """Run one task; returns the result and its cost without entry or paging."""
        if not self.state.provisioned:
            raise KeysNotProvisioned("bridge call before key provisioning")
        costs = self.config.costs
        vals, cost = [], 0.0
        for o in task.operands:
            v, c = self._open(o)
            vals.append(v)
            cost += c
        value = self._compute(task, vals)
        sealed, enc_cost = self._seal_result(task, value)
        self.calls += 1
        return sealed, cost + costs.tee_compute * max(1, len(vals) - 1) + enc_cost + costs.memory_copy

    def measure(self, task: BridgeTask) -> float:
        """Calculation cost of one task, excluding the entry cost and paging."""
        value, body = self._body(task)
        task.complete(value, body)
        return body

    def ecall_bridge(self, task: BridgeTask) -> tuple[object, float]:
        """Direct call: one enclave entry per task."""
        value, body = self._body(task)
        self.entries += 1
        micros = (self.config.ecall_fixed_cost_micros + body) * self.state.paging_factor()
        task.complete(value, micros)
        return value, micros

    def ecall_batch(self, tasks: list[BridgeTask]) -> float:
        """One entry for the whole batch; each task records its share of the cost."""
        if not tasks:
            return 0.0
        factor = self.state.paging_factor()
        fixed = self.config.ecall_fixed_cost_micros
        self.entries += 1
        total = fixed * factor
        for t in tasks:
            value, body = self._body(t)
            t.complete(value, (body + fixed / len(tasks)) * factor)
            total += body * factor
        return total
