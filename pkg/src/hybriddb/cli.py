"""Command-line harness: ``gen``, ``run``, ``report`` and ``attest-demo``.

Settings are layered: built-in defaults, then a JSON config file, then flags.
The config file comes from ``--config`` or, failing that, ``$HYBRIDDB_CONFIG``.
Its layout is ``{"workload": {...}, "enclave": {..., "costs": {...}}, "sim": {...}}``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from .bench.report import load_results, render_figures, summary_text, write_run, write_storage
from .bench.runner import (MODES, attestation_trials, materialize, report_storage, run_modes)
from .bench.sim import SimConfig
from .bench.workload import WorkloadKind, WorkloadSpec, dataset_fingerprint, generate_dataset
from .crypto import MasterKey
from .enclave.config import EnclaveConfig, VirtualCosts
from .rewriter import Keystore

ENV_CONFIG = "HYBRIDDB_CONFIG"
ENV_PASSPHRASE = "HYBRIDDB_PASSPHRASE"

EXIT_OK = 0
EXIT_GATE_FAILED = 1
EXIT_USAGE = 2

log = logging.getLogger("hybriddb")


def _flag(name: str, prefix: str = "") -> str:
    return "--" + prefix + name.replace("_", "-")


def _typ(f: dataclasses.Field):
    t = str(f.type)
    if "float" in t:
        return float
    if "int" in t:
        return int
    if "bool" in t:
        return None
    return str


def _add_dataclass_flags(group, cls, prefix: str = "", dest_prefix: str = "", skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        dest = dest_prefix + f.name
        typ = _typ(f)
        if typ is None:
            group.add_argument(_flag(f.name, prefix), dest=dest, default=None,
                               action=argparse.BooleanOptionalAction)
        else:
            group.add_argument(_flag(f.name, prefix), dest=dest, type=typ, default=None,
                               metavar=f.name.upper())


def _workload_flags(p):
    g = p.add_argument_group("workload")
    for f in dataclasses.fields(WorkloadSpec):
        if f.name == "kind":
            g.add_argument("--kind", dest="w_kind", choices=[k.value for k in WorkloadKind],
                           default=None)
        else:
            g.add_argument(_flag(f.name), dest="w_" + f.name, type=_typ(f) or str, default=None,
                           metavar=f.name.upper())


def _enclave_flags(p):
    g = p.add_argument_group("enclave")
    _add_dataclass_flags(g, EnclaveConfig, dest_prefix="e_", skip=("costs",))
    c = p.add_argument_group("virtual costs (microseconds)")
    _add_dataclass_flags(c, VirtualCosts, prefix="cost-", dest_prefix="c_")


def _sim_flags(p):
    g = p.add_argument_group("simulator")
    _add_dataclass_flags(g, SimConfig, dest_prefix="s_", skip=("keep_results",))


def config_path(args) -> Path | None:
    p = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    return Path(p) if p else None


def load_config(args) -> dict:
    p = config_path(args)
    if p is None:
        return {}
    with open(p) as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"workload", "enclave", "sim"}
    if unknown:
        raise ValueError(f"{p}: unknown config sections {sorted(unknown)}")
    return doc


def _overrides(args, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in vars(args).items()
            if k.startswith(prefix) and v is not None}


def build_settings(args) -> tuple[WorkloadSpec, EnclaveConfig, SimConfig]:
    doc = load_config(args)
    w = dict(doc.get("workload", {}))
    w.update(_overrides(args, "w_"))
    spec = WorkloadSpec.from_dict(w)

    e = dict(doc.get("enclave", {}))
    costs = dict(e.pop("costs", {}))
    costs.update(_overrides(args, "c_"))
    e.update(_overrides(args, "e_"))
    enclave = EnclaveConfig.from_dict({**e, "costs": costs})

    s = dict(doc.get("sim", {}))
    s.update(_overrides(args, "s_"))
    sim = SimConfig(**s)
    return spec, enclave, sim


def _parse_modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modes {bad}; choose from {', '.join(MODES)}")
    return modes


# -- subcommands ------------------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec, enclave, _ = build_settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(spec)
    passphrase = args.passphrase or os.environ.get(ENV_PASSPHRASE)
    if passphrase:
        master = MasterKey.generate()
        Keystore.save(out / "keys.bin", master, passphrase)
    else:
        log.warning("no passphrase given: using the fixed demo master key")
        master = MasterKey(bytes(32))
    deployments = {}
    for mode in args.modes:
        t = time.perf_counter()
        root = out / mode
        root.mkdir(exist_ok=True)
        dep = materialize(ds, mode, master, enclave, seed=spec.seed, root=root)
        dep.db.save()
        dep.client.save_catalog(root / "catalog.json")
        deployments[mode] = dep
        log.info("materialized %s in %.1fs", mode, time.perf_counter() - t)
    storage = report_storage(ds, args.modes, master, enclave, deployments)
    write_storage(storage, out / "storage.csv")
    meta = {"workload": spec.to_dict(), "counts": ds.counts, "columns": ds.column_count,
            "plaintext_sha256": hashlib.sha256(dataset_fingerprint(ds)).hexdigest(),
            "modes": args.modes, "keystore": bool(passphrase)}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2))
    for m, v in storage.items():
        print(f"{m:16s} {v['bytes']:>12d} bytes  ratio {v['ratio']:.2f}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec, enclave, sim = build_settings(args)
    t = time.perf_counter()
    outcomes = run_modes(args.modes, spec, enclave, sim)
    wall = time.perf_counter() - t
    # measured after the run; every mode applied the same writes
    storage = {}
    base = outcomes["plaintext"].report.storage_bytes
    for m, o in outcomes.items():
        storage[m] = {"bytes": o.report.storage_bytes, "ratio": o.report.storage_bytes / base}
    out = Path(args.out)
    write_run(outcomes, out, storage)
    print(summary_text(load_results(out)))
    if args.profile_wall:
        print(f"\nwall clock: {wall:.2f}s for {len(outcomes)} modes")
    ok = all(o.report.correct for o in outcomes.values())
    for m, o in outcomes.items():
        if not o.report.correct:
            print(f"CORRECTNESS GATE FAILED for {m}: {o.report.mismatches[:5]}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_GATE_FAILED


def cmd_report(args) -> int:
    data = load_results(args.dir)
    print(summary_text(data))
    if not args.no_plots:
        try:
            paths = render_figures(data, args.dir, args.format)
        except ImportError:
            print("matplotlib is not installed; skipping figures", file=sys.stderr)
        else:
            for p in paths:
                print(f"wrote {p}")
    gate = all(r.get("correct", "1") in ("1", "") for r in data["runs"])
    return EXIT_OK if gate else EXIT_GATE_FAILED


def cmd_attest(args) -> int:
    _, enclave, _ = build_settings(args)
    s = attestation_trials(args.honest, args.tampered, args.seed_attest, enclave)
    print(f"honest sessions:   {s.honest_ok}/{s.honest} agreed on SK and provisioned keys")
    print(f"tampered sessions: {s.tampered_failed_closed}/{s.tampered} failed closed")
    for f in s.failures[:10]:
        print(f"  {f}", file=sys.stderr)
    return EXIT_OK if s.passed else EXIT_GATE_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybriddb", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workload=True, simulator=False):
        sp.add_argument("--config", help=f"JSON config file (default: ${ENV_CONFIG})")
        if workload:
            _workload_flags(sp)
        _enclave_flags(sp)
        if simulator:
            _sim_flags(sp)

    g = sub.add_parser("gen", help="generate and encrypt a dataset per mode")
    common(g)
    g.add_argument("--out", default="hybriddb-data")
    g.add_argument("--modes", type=_parse_modes, default=list(MODES))
    g.add_argument("--passphrase", help=f"wrap a fresh master key (or set ${ENV_PASSPHRASE})")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the workload in each mode and gate on correctness")
    common(r, simulator=True)
    r.add_argument("--out", default="hybriddb-results")
    r.add_argument("--modes", type=_parse_modes, default=list(MODES))
    r.add_argument("--profile-wall", action="store_true", help="print wall-clock time as well")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a results directory and render figures")
    rep.add_argument("dir")
    rep.add_argument("--no-plots", action="store_true")
    rep.add_argument("--format", default="png", choices=["png", "svg", "pdf"])
    rep.set_defaults(func=cmd_report)

    a = sub.add_parser("attest-demo", help="honest and tampered attestation sessions")
    common(a, workload=False)
    a.add_argument("--honest", type=int, default=100)
    a.add_argument("--tampered", type=int, default=100)
    a.add_argument("--seed-attest", type=int, default=0)
    a.set_defaults(func=cmd_attest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"hybriddb: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
