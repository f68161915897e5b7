"""Access-path choice and filter ordering for rewritten queries.

Plans are a chain of :class:`PlanNode` (scan or index scan, filters, sort,
aggregate, limit) with a per-node estimate in abstract cost units. Filters run
cheapest first so that expensive operators see the fewest rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..rewriter import PLAIN, Capability, RPred, RSelect, RUpdate
from .storage import EncryptedTable

LOWER_OPS = (">", ">=")
UPPER_OPS = ("<", "<=")


@dataclass(frozen=True)
class PlanCosts:
    plain: float = 1.0
    det: float = 2.0
    he: float = 20.0
    ore: float = 50.0
    tee: float = 200.0
    round_trip: float = 1000.0


_CAP_COST = {Capability.PLAIN: "plain", Capability.DET_EQUAL: "det",
             Capability.ORE_COMPARE: "ore", Capability.TEE_BRIDGE: "tee"}


def predicate_cost(pred: RPred, pc: PlanCosts, c_runtime: float = 0.0) -> float:
    """Cheapest per-row cost over the predicate's capabilities."""
    caps = pred.capabilities
    options = []
    if Capability.PLAIN in caps:
        options.append(pc.plain)
    if pred.arith is not None and Capability.CLIENT_ROUND_TRIP in caps:
        options.append(pc.he + pc.round_trip + pc.ore)
    elif pred.arith is None:
        for cap in (Capability.DET_EQUAL, Capability.ORE_COMPARE):
            if cap in caps and (cap is not Capability.DET_EQUAL or pred.op == "="):
                options.append(getattr(pc, _CAP_COST[cap]))
    if Capability.TEE_BRIDGE in caps:
        options.append(pc.tee + c_runtime)
    return min(options)


@dataclass
class PlanNode:
    op: str
    cost: float
    child: "PlanNode | None" = None
    detail: dict = field(default_factory=dict)

    def chain(self) -> list["PlanNode"]:
        out, n = [], self
        while n is not None:
            out.append(n)
            n = n.child
        return out[::-1]


@dataclass
class IndexRange:
    pos: int
    low: object = None
    high: object = None
    low_inclusive: bool = True
    high_inclusive: bool = True
    used: list = field(default_factory=list)


@dataclass
class Plan:
    index: IndexRange | None
    filters: list[RPred]
    root: PlanNode

    def explain(self) -> str:
        return " -> ".join(f"{n.op}({n.cost:g})" for n in self.root.chain())


def _index_range(table: EncryptedTable, preds: list[RPred]) -> IndexRange | None:
    candidates = [p for p in preds
                  if p.arith is None and "ore" in p.literals and p.col.has("ore")
                  and p.col.fields["ore"] in table.indexes]
    for p in candidates:
        if p.op == "=":
            lit = p.literals["ore"]
            return IndexRange(p.col.fields["ore"], lit, lit, True, True, [p])
    for p in candidates:
        pos = p.col.fields["ore"]
        same = [q for q in candidates if q.col.fields["ore"] == pos]
        lo = next((q for q in same if q.op in LOWER_OPS), None)
        hi = next((q for q in same if q.op in UPPER_OPS), None)
        r = IndexRange(pos)
        if lo is not None:
            r.low, r.low_inclusive = lo.literals["ore"], lo.op == ">="
            r.used.append(lo)
        if hi is not None:
            r.high, r.high_inclusive = hi.literals["ore"], hi.op == "<="
            r.used.append(hi)
        return r
    return None


def plan_query(q: RSelect | RUpdate, table: EncryptedTable, pc: PlanCosts | None = None,
               c_runtime: float = 0.0) -> Plan:
    pc = pc or PlanCosts()
    n = max(1, len(table))
    idx = _index_range(table, q.preds)
    if idx is not None:
        node = PlanNode("index_scan", pc.ore * max(1, n.bit_length()),
                        detail={"field": table.layout.fields[idx.pos].name})
        rest = [p for p in q.preds if not any(p is u for u in idx.used)]
        rows = max(1, n // 10)
    else:
        node = PlanNode("scan", pc.plain * n)
        rest = list(q.preds)
        rows = n
    costed = sorted(((predicate_cost(p, pc, c_runtime), i, p) for i, p in enumerate(rest)),
                    key=lambda t: (t[0], t[1]))
    for c, _, p in costed:
        node = PlanNode("filter", c * rows, node, {"column": p.col.column, "op": p.op})
    if isinstance(q, RSelect):
        if q.group_by is not None or any(not hasattr(it, "fields") for it in q.items):
            node = PlanNode("aggregate", pc.he * rows, node)
        elif q.order_by is not None:
            sort_cost = pc.plain if q.order_by.plain else pc.ore
            node = PlanNode("sort", sort_cost * rows * max(1, rows.bit_length()), node)
        if q.limit is not None:
            node = PlanNode("limit", 0.0, node, {"n": q.limit})
    return Plan(idx, [p for _, _, p in costed], node)


def plain_literal(pred: RPred):
    return pred.literals[PLAIN]
