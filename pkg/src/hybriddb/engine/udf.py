"""UDF registry: every server-side operation has a software and/or enclave form.

A software implementation is ``fn(costs, *args) -> (result, micros)`` and runs
directly on property-preserving ciphertexts. An enclave implementation is
``fn(*args) -> BridgeTask`` and is executed by the runtime, directly or
through the task pool. Both forms of one kind must decrypt to the same value.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..crypto import ore_compare, sahe_add, smhe_mul
from ..enclave.bridge import BridgeOp, BridgeTask, ResultTag, SYMBOL_OPS
from ..enclave.config import VirtualCosts

SoftwareImpl = Callable[..., tuple[object, float]]
TeeImpl = Callable[..., BridgeTask]

CMP_BRIDGE = {"<": BridgeOp.LT, "<=": BridgeOp.LE, ">": BridgeOp.GT, ">=": BridgeOp.GE,
              "=": BridgeOp.EQ}


class DuplicateUdf(ValueError):
    pass


class UnregisteredUdf(KeyError):
    pass


@dataclass(frozen=True)
class Udf:
    kind: str
    software: SoftwareImpl | None
    tee: TeeImpl | None


class UdfRegistry:
    def __init__(self):
        self._udfs: dict[str, Udf] = {}

    def register_udf(self, kind: str, software: SoftwareImpl | None = None,
                     tee: TeeImpl | None = None) -> Udf:
        if kind in self._udfs:
            raise DuplicateUdf(f"UDF {kind!r} already registered")
        if software is None and tee is None:
            raise ValueError(f"UDF {kind!r} needs at least one implementation")
        u = self._udfs[kind] = Udf(kind, software, tee)
        return u

    def get(self, kind: str) -> Udf:
        try:
            return self._udfs[kind]
        except KeyError:
            raise UnregisteredUdf(f"no UDF registered for {kind!r}") from None

    def __contains__(self, kind: str) -> bool:
        return kind in self._udfs

    def kinds(self) -> list[str]:
        return sorted(self._udfs)


# -- software forms ----------------------------------------------------------------------

def sw_compare(costs: VirtualCosts, a, b, op: str):
    return SYMBOL_OPS[op](int(ore_compare(a, b)), 0), costs.ore_compare


def sw_cmp3(costs: VirtualCosts, a, b):
    return int(ore_compare(a, b)), costs.ore_compare


def sw_eq(costs: VirtualCosts, a, b):
    return a.data == b.data, costs.det_eq


def sw_add(costs: VirtualCosts, a, b):
    return sahe_add(a, b), costs.ahe_add


def sw_mul(costs: VirtualCosts, a, b):
    return smhe_mul(a, b), costs.mhe_mul


def sw_sum(costs: VirtualCosts, ciphers, zero):
    acc = zero
    for c in ciphers:
        acc = sahe_add(acc, c)
    return acc, costs.ahe_add * len(ciphers)


def _sw_extreme(costs: VirtualCosts, ciphers, payloads, want: int):
    """First minimum (want=-1) or maximum (want=1) by ORE comparison.

    Returns the winner's payload (another encoding of the same row value), or
    its index when no payloads are given.
    """
    best = 0
    for i in range(1, len(ciphers)):
        if int(ore_compare(ciphers[i], ciphers[best])) == want:
            best = i
    cost = costs.ore_compare * max(0, len(ciphers) - 1)
    return (best if payloads is None else payloads[best]), cost


def sw_min(costs, ciphers, payloads=None):
    return _sw_extreme(costs, ciphers, payloads, -1)


def sw_max(costs, ciphers, payloads=None):
    return _sw_extreme(costs, ciphers, payloads, 1)


# -- enclave forms ---------------------------------------------------------------------------

def tee_compare(a, b, op: str) -> BridgeTask:
    return BridgeTask(CMP_BRIDGE[op], ResultTag.BOOL, (a, b))


def tee_eq(a, b) -> BridgeTask:
    return BridgeTask(BridgeOp.EQ, ResultTag.BOOL, (a, b))


def tee_cmp3(a, b) -> BridgeTask:
    return BridgeTask(BridgeOp.CMP, ResultTag.ORDER, (a, b))


def tee_add(a, b, result=ResultTag.RND, label: str | None = None) -> BridgeTask:
    return BridgeTask(BridgeOp.ADD, result, (a, b), result_label=label)


def tee_mul(a, b, result=ResultTag.RND, label: str | None = None) -> BridgeTask:
    return BridgeTask(BridgeOp.MUL, result, (a, b), result_label=label)


def tee_arith_cmp(x, addend, bound, arith: str, cmp: str) -> BridgeTask:
    return BridgeTask(BridgeOp.ARITH_CMP, ResultTag.BOOL, (x, addend, bound), arith=arith, cmp=cmp)


def tee_convert(x, result: ResultTag) -> BridgeTask:
    return BridgeTask(BridgeOp.CONVERT, result, (x,))


def tee_sum(operands, label: str) -> BridgeTask:
    return BridgeTask(BridgeOp.SUM, ResultTag.AHE, tuple(operands), result_label=label)


def tee_min(operands) -> BridgeTask:
    return BridgeTask(BridgeOp.MIN, ResultTag.RND, tuple(operands))


def tee_max(operands) -> BridgeTask:
    return BridgeTask(BridgeOp.MAX, ResultTag.RND, tuple(operands))


def default_registry() -> UdfRegistry:
    r = UdfRegistry()
    r.register_udf("compare", sw_compare, tee_compare)
    r.register_udf("eq", sw_eq, tee_eq)
    r.register_udf("cmp3", sw_cmp3, tee_cmp3)
    r.register_udf("add", sw_add, tee_add)
    r.register_udf("mul", sw_mul, tee_mul)
    r.register_udf("arith_cmp", None, tee_arith_cmp)
    r.register_udf("convert", None, tee_convert)
    r.register_udf("sum", sw_sum, tee_sum)
    r.register_udf("min", sw_min, tee_min)
    r.register_udf("max", sw_max, tee_max)
    return r
