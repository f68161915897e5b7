"""Wiring: one deployment = client + server storage + runtime for a mode."""
from __future__ import annotations

import random
from dataclasses import dataclass

from ..adaptive import AdaptiveSwitch, CostModelParams, Path, calibrate
from ..crypto import MasterKey, Scheme, derive_column_key
from ..crypto.codec import encrypt_value
from ..enclave import (Enclave, EnclaveConfig, EnclaveState, Operand, ProbeHistory, ResultTag,
                       TaskPool, attest_and_provision, run_probe)
from ..rewriter import Client, ResultSet
from ..schema import ColumnSpec, Mode
from . import udf as U
from .executor import execute
from .storage import Database
from .work import AdaptiveDispatcher, Runtime, StaticDispatcher, drive

CALIBRATION_LABEL = "calibration.sample"


class ProvisioningFailed(RuntimeError):
    pass


def calibrate_switch(enclave: Enclave, master: MasterKey, repeats: int = 100,
                     seed: int = 0, **kw) -> CostModelParams:
    """Seed per-kind costs by running every UDF ``repeats`` times on both paths.

    Enclave runners use fresh ciphertexts so the decrypt cache does not flatter
    them; the cache and call counters are reset afterwards.
    """
    costs = enclave.config.costs
    rng = random.Random(seed)

    def enc(scheme: Scheme, v: int | None = None):
        key = derive_column_key(master, CALIBRATION_LABEL, scheme)
        return encrypt_value(rng.randrange(1 << 20) if v is None else v, key)

    def rnd() -> Operand:
        return Operand(enc(Scheme.RND), CALIBRATION_LABEL)

    ores = [enc(Scheme.ORE) for _ in range(8)]

    def tee(task_fn, per: int = 1):
        return lambda: enclave.measure(task_fn()) / per

    k = 8
    runners = {
        "compare": (lambda: U.sw_compare(costs, ores[0], ores[1], "<")[1],
                    {"bool": tee(lambda: U.tee_compare(rnd(), rnd(), "<"))}),
        "eq": (lambda: U.sw_eq(costs, enc(Scheme.DET), enc(Scheme.DET))[1],
               {"bool": tee(lambda: U.tee_eq(rnd(), rnd()))}),
        "sort": (lambda: U.sw_cmp3(costs, ores[2], ores[3])[1],
                 {"*": tee(lambda: U.tee_cmp3(rnd(), rnd()))}),
        "add": (lambda: costs.ahe_add, {"*": tee(lambda: U.tee_add(rnd(), rnd()))}),
        "mul": (lambda: costs.mhe_mul, {"*": tee(lambda: U.tee_mul(rnd(), rnd()))}),
        "sum": (lambda: costs.ahe_add,
                {"*": tee(lambda: U.tee_sum([rnd() for _ in range(k)], CALIBRATION_LABEL), k)}),
        "min": (lambda: U.sw_min(costs, ores)[1] / len(ores),
                {"*": tee(lambda: U.tee_min([rnd() for _ in range(k)]), k)}),
        "max": (lambda: U.sw_max(costs, ores)[1] / len(ores),
                {"*": tee(lambda: U.tee_max([rnd() for _ in range(k)]), k)}),
        "arith_cmp": (None, {"*": tee(lambda: U.tee_arith_cmp(rnd(), rnd(), rnd(), "+", "<"))}),
        "convert": (None, {"*": tee(lambda: U.tee_convert(rnd(), ResultTag.DET))}),
    }
    params = calibrate(runners, enclave.config.ecall_fixed_cost_micros, repeats,
                       decide_unit_cost=costs.decide_unit, **kw)
    enclave.state.cache.clear()
    enclave.calls = 0
    return params


@dataclass
class Deployment:
    mode: Mode
    client: Client
    db: Database
    rt: Runtime
    state: EnclaveState | None = None
    switch: AdaptiveSwitch | None = None
    master: MasterKey | None = None

    def create_table(self, name: str, specs: list[ColumnSpec], indexes=()):
        """Register with the client, create server storage and ORE indexes where possible."""
        schema = self.client.register_table(name, specs)
        table = self.db.create_table(schema.layout)
        for col in indexes:
            c = schema.column(col)
            if Scheme.ORE in c.schemes:
                table.create_index(f"{c.anon_name}_ore")
        return schema

    def load(self, name: str, rows) -> int:
        """Bulk-load plaintext rows; not charged to the virtual clock."""
        table = self.db.table(self.client.table(name).anon_name)
        n = 0
        for r in rows:
            table.insert(self.client.encrypt_row(name, r))
            n += 1
        return n

    def run(self, sql: str, params: dict | None = None) -> tuple[ResultSet, float]:
        rq = self.client.rewrite(sql, params)
        return drive(execute(rq, self.db), self.rt)

    def query(self, sql: str, params: dict | None = None) -> list[tuple]:
        rs, _ = self.run(sql, params)
        if rs.affected is not None and not rs.columns:
            return [(rs.affected,)]
        return self.client.decrypt_results(rs)


def deploy(mode: Mode | str, master: MasterKey | None = None, config: EnclaveConfig | None = None,
           root=None, seed: int = 0, switch_params: CostModelParams | None = None) -> Deployment:
    mode = Mode(mode)
    master = master or MasterKey.generate()
    config = config or EnclaveConfig()
    client = Client(master, mode, seed=seed, costs=config.costs)
    rt = Runtime(costs=config.costs, client=client)
    dep = Deployment(mode, client, Database(root), rt, master=master)
    if not mode.uses_enclave:
        rt.dispatcher = StaticDispatcher(Path.SOFTWARE)
        return dep
    state = EnclaveState(config, rt.clock)
    outcome = attest_and_provision(master, state)
    if not outcome.ok:
        raise ProvisioningFailed(f"attestation failed: {outcome.error}")
    rt.enclave = Enclave(state)
    dep.state = state
    if mode is Mode.STATIC_TEE_POOL:
        rt.pool = TaskPool(rt.enclave)
    if mode is Mode.ADAPTIVE:
        history = ProbeHistory()
        history.record_baseline(run_probe(state=state, seed=seed))
        params = switch_params or calibrate_switch(rt.enclave, master, seed=seed)
        dep.switch = AdaptiveSwitch(params, history, rt.clock)
        dep.switch.refresh()
        rt.dispatcher = AdaptiveDispatcher(dep.switch)
    else:
        rt.dispatcher = StaticDispatcher(Path.TEE)
    return dep
