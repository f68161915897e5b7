"""CSV output, stdout summary tables, and optional figures.

Every CSV carries a ``schema_version`` column. Files written by :func:`write_run`:

runs.csv       one row per mode: throughput, latency percentiles, storage, gate result
calls.csv      per mode, op kind and path: calls, virtual micros, enclave entries
latencies.csv  per operation: session, kind, start, end, latency (virtual micros)
probes.csv     adaptive probe trace: timestamp, duration
decisions.csv  adaptive per-group decisions: kind, C_soft, C_tee, path, regime, calls
storage.csv    bytes and expansion ratio per mode

matplotlib is imported only by :func:`render_figures`.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path as FsPath

CSV_SCHEMA_VERSION = 1


def _write(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", *header])
        for r in rows:
            w.writerow([CSV_SCHEMA_VERSION, *r])


def _read(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        v = r.get("schema_version")
        if v is not None and int(v) != CSV_SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported CSV schema version {v}")
    return rows


def write_run(outcomes: dict, out_dir, storage: dict | None = None) -> list[FsPath]:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = [o.report.to_row() for o in outcomes.values()]
    header = list(rows[0]) if rows else []
    _write(out / "runs.csv", header, ([r[h] for h in header] for r in rows))
    written.append(out / "runs.csv")

    calls = []
    for mode, o in outcomes.items():
        for s in o.metrics.summary():
            calls.append([mode, s["kind"], s["path"], s["calls"], f"{s['micros']:.3f}",
                          s["entries"]])
    _write(out / "calls.csv", ["mode", "kind", "path", "calls", "micros", "entries"], calls)
    written.append(out / "calls.csv")

    lat = [[mode, r.session, r.kind, f"{r.start:.3f}", f"{r.end:.3f}", f"{r.latency:.3f}"]
           for mode, o in outcomes.items() for r in o.sim.ops]
    _write(out / "latencies.csv", ["mode", "session", "kind", "start_us", "end_us", "latency_us"],
           lat)
    written.append(out / "latencies.csv")

    probes = [[mode, f"{t:.3f}", f"{d:.3f}"] for mode, o in outcomes.items()
              for t, d in o.report.probe_trace]
    _write(out / "probes.csv", ["mode", "timestamp_us", "duration_us"], probes)
    written.append(out / "probes.csv")

    dec = []
    for mode, o in outcomes.items():
        sw = o.deployment.switch
        for d in (sw.log or []) if sw is not None else []:
            dec.append([mode, f"{d.timestamp:.3f}", d.kind, f"{d.c_soft:.4f}", f"{d.c_tee:.4f}",
                        d.path.value, d.regime.value, d.calls])
    _write(out / "decisions.csv",
           ["mode", "timestamp_us", "kind", "c_soft", "c_tee", "path", "regime", "calls"], dec)
    written.append(out / "decisions.csv")

    if storage:
        write_storage(storage, out / "storage.csv")
        written.append(out / "storage.csv")
    return written


def write_storage(storage: dict, path) -> None:
    _write(path, ["mode", "bytes", "ratio"],
           ([m, v["bytes"], f"{v['ratio']:.4f}"] for m, v in storage.items()))


def load_results(out_dir) -> dict[str, list[dict]]:
    out = FsPath(out_dir)
    data = {}
    for name in ("runs", "calls", "latencies", "probes", "decisions", "storage"):
        p = out / f"{name}.csv"
        if p.exists():
            data[name] = _read(p)
    if "runs" not in data:
        raise FileNotFoundError(f"no runs.csv under {out}")
    return data


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[str(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    line = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    sep = "  ".join("-" * w for w in widths)
    body = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join([line, sep, *body])


RUN_COLUMNS = ["mode", "concurrency", "qps", "tps", "latency_p50_us", "latency_p95_us",
               "latency_mean_us", "storage_bytes", "cache_hit_rate", "correct"]


def summary_text(data: dict[str, list[dict]]) -> str:
    parts = ["Runs", format_table(data["runs"], RUN_COLUMNS)]
    calls = data.get("calls") or []
    if calls:
        share = {}
        for r in calls:
            share.setdefault((r["mode"], r["kind"]), {})[r["path"]] = int(r["calls"])
        rows = []
        for (mode, kind), paths in sorted(share.items()):
            total = sum(paths.values())
            tee = paths.get("tee", 0)
            rows.append({"mode": mode, "kind": kind, "calls": total,
                         "tee_share": f"{tee / total:.3f}" if total else ""})
        parts += ["", "Path share", format_table(rows, ["mode", "kind", "calls", "tee_share"])]
    if data.get("storage"):
        parts += ["", "Storage expansion", format_table(data["storage"], ["mode", "bytes", "ratio"])]
    return "\n".join(parts)


def render_figures(data: dict[str, list[dict]], out_dir, fmt: str = "png") -> list[FsPath]:
    """Throughput, latency, probe-trace and path-share figures next to the CSVs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = FsPath(out_dir)
    written = []
    runs = data["runs"]

    def save(fig, name):
        p = out / f"{name}.{fmt}"
        fig.tight_layout()
        fig.savefig(p)
        plt.close(fig)
        written.append(p)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [f"{r['mode']}\nc={r['concurrency']}" for r in runs]
    ax.bar(range(len(runs)), [float(r["qps"]) for r in runs])
    ax.set_xticks(range(len(runs)), labels, fontsize=7)
    ax.set_ylabel("QPS (virtual)")
    save(fig, "throughput")

    lat = data.get("latencies") or []
    if lat:
        by_mode: dict[str, list[float]] = {}
        for r in lat:
            by_mode.setdefault(r["mode"], []).append(float(r["latency_us"]))
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.boxplot(list(by_mode.values()), showfliers=False)
        ax.set_xticks(range(1, len(by_mode) + 1), list(by_mode), fontsize=7)
        ax.set_ylabel("latency (virtual us)")
        save(fig, "latency")

    probes = data.get("probes") or []
    if probes:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for mode in dict.fromkeys(r["mode"] for r in probes):
            pts = [(float(r["timestamp_us"]), float(r["duration_us"])) for r in probes
                   if r["mode"] == mode]
            ax.plot([p[0] / 1e3 for p in pts], [p[1] for p in pts], marker=".", label=mode)
        ax.set_xlabel("virtual time (ms)")
        ax.set_ylabel("probe duration (us)")
        ax.legend(fontsize=7)
        save(fig, "probes")

    calls = data.get("calls") or []
    tee = {}
    for r in calls:
        if r["kind"] in ("compare", "eq", "sort", "add", "mul", "sum", "min", "max"):
            t = tee.setdefault(r["mode"], [0, 0])
            t[1] += int(r["calls"])
            if r["path"] == "tee":
                t[0] += int(r["calls"])
    if tee:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        modes = list(tee)
        ax.bar(range(len(modes)), [t[0] / t[1] if t[1] else math.nan for t in tee.values()])
        ax.set_xticks(range(len(modes)), modes, fontsize=7)
        ax.set_ylabel("enclave share of UDF calls")
        ax.set_ylim(0, 1)
        save(fig, "path_share")
    return written
