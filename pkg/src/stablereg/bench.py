"""Benchmark experiments at desk scale: client/server/object-size scalability,
reset time, and the overhead of the self-stabilizing variant versus the plain
coded baseline, over the simulator or a real loopback deployment.

Each sweep point reports the mean of per-client mean latencies after dropping
exactly the fastest and slowest sample per client, plus round and byte
accounting. Output is one CSV (plus a PNG chart) per experiment.
"""

from __future__ import annotations

import math
import os
import random
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import FaultInjection, LinkModel, ScenarioConfig
from .core import InvalidConfig, QuorumConfig, StableRegError, Variant
from .sim import OpRecord, ScenarioRun, run_scenario

EXPERIMENTS = ("readers", "writers", "servers", "objsize", "reset", "overhead")

CSV_HEADER = "sweep,variant,op,mean_ms,stddev_ms,rounds,bytes,unsuccessful_reads"

#: (N, f) pairs for the server sweeps; f grows where the coding-library bound
#: of 32 shards forced it in the reference setup.
SERVER_SWEEP = ((5, 2), (10, 2), (15, 2), (20, 4), (30, 14))

DEFAULT_SWEEPS = {
    "readers": (5, 10, 15, 20, 30, 40),
    "writers": (5, 10, 15, 20, 30, 40),
    "servers": SERVER_SWEEP,
    "objsize": (1, 32, 128, 512, 1024, 2048, 4096),  # KiB
    "reset": (3, 5, 10),
    "overhead": SERVER_SWEEP,
}

VARIANTS_BY_EXPERIMENT = {
    "readers": (Variant.MWABD, Variant.CASSS),
    "writers": (Variant.MWABD, Variant.CASSS),
    "servers": (Variant.MWABD, Variant.CASSS),
    "objsize": (Variant.MWABD, Variant.CASSS),
    "reset": (Variant.CASSS,),
    "overhead": (Variant.CAS, Variant.CASSS),
}


class BackendUnavailable(StableRegError):
    """The requested benchmark backend cannot run here."""


@dataclass
class ExperimentSpec:
    name: str
    sweep: tuple = ()
    repetitions: int = 0   # operations per client; 0 picks the backend default
    trim: int = 1
    backend: str = "sim"
    seed: int = 1
    object_size: int = 8 * 1024  # desk-scale default for client/server sweeps
    out_dir: Path | None = None
    link: LinkModel = field(default_factory=LinkModel)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise InvalidConfig(f"unknown experiment {self.name!r}")
        if self.backend not in ("sim", "net"):
            raise InvalidConfig(f"unknown backend {self.backend!r}")
        if not self.sweep:
            self.sweep = DEFAULT_SWEEPS[self.name]
        if self.repetitions == 0:
            self.repetitions = 50 if self.backend == "sim" else 20
        if self.repetitions < 3:
            raise InvalidConfig("repetitions must be at least 3")
        if self.trim != 1:
            raise InvalidConfig("trim removes exactly the fastest and slowest sample")

    def resolve_out_dir(self) -> Path:
        base = os.environ.get("STABLEREG_OUT")
        out = self.out_dir or (Path(base) if base else Path("bench-out"))
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return out


@dataclass
class SweepRow:
    sweep: object
    variant: str
    op: str
    mean_ms: float
    stddev_ms: float
    rounds: float
    bytes: float
    unsuccessful_reads: int

    def csv(self) -> str:
        return (f"{self.sweep},{self.variant},{self.op},{self.mean_ms:.3f},"
                f"{self.stddev_ms:.3f},{self.rounds:.2f},{self.bytes:.0f},"
                f"{self.unsuccessful_reads}")


def trim_latencies(samples: list[float], trim: int = 1) -> list[float]:
    """Drop exactly the fastest and slowest sample (when enough remain)."""
    if len(samples) <= 2 * trim:
        return sorted(samples)
    return sorted(samples)[trim:-trim]


def summarize(ops: list[OpRecord], kind: str, total_bytes: int,
              total_ops: int, trim: int = 1):
    by_client: dict[str, list[float]] = {}
    rounds: list[int] = []
    for op in ops:
        if op.kind != kind or op.status != "ok":
            continue
        by_client.setdefault(op.client, []).append(op.latency_ms())
        rounds.append(op.rounds)
    if not by_client:
        return None
    client_means = [statistics.fmean(trim_latencies(v, trim))
                    for v in by_client.values()]
    mean = statistics.fmean(client_means)
    stddev = statistics.pstdev(client_means) if len(client_means) > 1 else 0.0
    bytes_per_op = total_bytes / max(1, total_ops)
    return mean, stddev, statistics.fmean(rounds), bytes_per_op


def scenario_for(spec: ExperimentSpec, sweep_value, variant: Variant,
                 seed: int) -> ScenarioConfig:
    name = spec.name
    if name in ("readers", "writers"):
        n, f = 10, 2
        readers = sweep_value if name == "readers" else 10
        writers = sweep_value if name == "writers" else 10
        size = spec.object_size
    elif name in ("servers", "overhead"):
        n, f = sweep_value
        readers = writers = 10 if name == "servers" else 1
        size = spec.object_size
    elif name == "objsize":
        n, f = 10, 2
        readers = writers = 1
        size = sweep_value * 1024
    elif name == "reset":
        n, f = sweep_value, 0
        readers = writers = 1
        size = 256
    else:
        raise InvalidConfig(name)
    k = 1 if variant is Variant.MWABD else max(1, n - 2 * f)
    quorum = QuorumConfig(tuple(f"s{i}" for i in range(n)), f=f, k=k,
                          variant=variant,
                          n_clients=max(8, readers + writers))
    return ScenarioConfig(
        quorum=quorum, seed=seed, n_writers=writers, n_readers=readers,
        object_size=size, op_count=spec.repetitions, link=spec.link,
        inter_op_delay_ms=(0.0, 120.0),
        max_run_ms=3_600_000.0,
    )


# -- backends ---------------------------------------------------------------------

def _run_sim(scen: ScenarioConfig):
    run = run_scenario(scen)
    done = len(run.metrics.completed())
    return (run.metrics.ops, run.metrics.bytes_sent, done,
            run.metrics.unsuccessful_reads)


def _run_net(scen: ScenarioConfig):
    from .netrun import NetCluster
    cluster = NetCluster(scen)
    runtime = cluster.runtime
    try:
        nodes = []
        for i in range(scen.n_clients):
            nodes.append(cluster.add_client(i).node)
        records: list[OpRecord] = []
        remaining = {"n": len(nodes)}
        rng = random.Random(scen.seed)

        def chain(node, role, left):
            if left == 0:
                remaining["n"] -= 1
                return

            def go():
                kind = role
                value = rng.randbytes(scen.object_size) if kind == "write" else None
                rec = OpRecord(node.node_id, kind, "", runtime.now())

                def done(result):
                    rec.t_end = runtime.now()
                    rec.rounds = node.rounds_this_op
                    rec.retries = node.retries_this_op
                    rec.status = ("unsuccessful" if isinstance(result, StableRegError)
                                  else "ok")
                    records.append(rec)
                    chain(node, role, left - 1)

                node.submit(kind, value, done)

            lo, hi = scen.inter_op_delay_ms
            runtime.set_timer(node.node_id, rng.uniform(lo, hi), go)

        for i, node in enumerate(nodes):
            role = "write" if i < scen.n_writers else "read"
            chain(node, role, scen.op_count)
        runtime.run_until(lambda: remaining["n"] == 0,
                          timeout_ms=30 * 60 * 1000.0)
        done = sum(1 for r in records if r.status == "ok")
        fails = sum(1 for r in records if r.status != "ok")
        return records, runtime.counters.bytes, done, fails
    finally:
        cluster.close()


# -- the reset experiment ------------------------------------------------------------

def run_reset_trial(n_servers: int, seed: int, spec: ExperimentSpec):
    """One seeded trial: write a few values, inject a maximal tag, stall a
    read through the reset, and time injection-to-successful-query.

    Returns (reset_ms, mean_write_ms, preserved_ok, resets_seen).
    """
    if spec.backend != "sim":
        raise BackendUnavailable("the reset experiment runs on the simulator")
    scen = scenario_for(spec, n_servers, Variant.CASSS, seed)
    scen = replace(scen, op_count=3, n_readers=1, n_writers=1,
                   gossip_period_ms=50.0, phase_timeout_ms=200.0,
                   inter_op_delay_ms=(10.0, 60.0))
    run = ScenarioRun(scen)
    run.run()
    writes = run.metrics.completed("write")
    if len(writes) != 3:
        raise StableRegError("reset trial warm-up failed")
    mean_write = statistics.fmean(op.latency_ms() for op in writes)
    last_label = writes[-1].value_label
    last_value = next(v for v, lab in run.value_labels.items()
                      if lab == last_label)

    t_inj = run.net.clock + 10.0
    run.net.schedule(t_inj, lambda: run._apply_fault(
        FaultInjection(t_inj, "injectOverflowTag", scen.quorum.servers[0])))
    run.net.run_until(t_inj)

    reader = run.clients["c1"]
    box: list = []
    reader.submit("read", None, box.append)
    run.net.run(scen.max_run_ms, stop_when=lambda: bool(box))
    reset_ms = run.net.clock - t_inj
    result = box[0]
    preserved = (not isinstance(result, StableRegError)
                 and result[2] == last_value)
    resets = sum(1 for e in run.metrics.events if e[2] == "local_reset")
    return reset_ms, mean_write, preserved, resets


# -- orchestration ----------------------------------------------------------------------

def run_experiment(spec: ExperimentSpec, progress=None) -> dict:
    """Execute the sweep; returns {csv: Path, plot: Path, rows: [SweepRow]}.

    Rows are flushed to the CSV as they complete so an interrupted run leaves
    partial results behind.
    """
    out = spec.resolve_out_dir()
    csv_path = out / f"{spec.name}.csv"
    rows: list[SweepRow] = []
    completed_all = True
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(f"# experiment={spec.name} backend={spec.backend} "
                 f"seed={spec.seed}\n")
        fh.write(f"# repetitions={spec.repetitions} trim={spec.trim} "
                 f"object_size={spec.object_size}\n")
        fh.write("# inter_op_delay=uniform(0,120)ms\n")
        fh.write(CSV_HEADER + "\n")
        fh.flush()
        try:
            for value in spec.sweep:
                for row in _sweep_point(spec, value):
                    rows.append(row)
                    fh.write(row.csv() + "\n")
                    fh.flush()
                if progress is not None:
                    progress(spec.name, value)
        except KeyboardInterrupt:
            completed_all = False
    plot_path = None
    if rows:
        plot_path = plot_rows(spec, rows, out)
    return {"csv": csv_path, "plot": plot_path, "rows": rows,
            "completed": completed_all}


def _sweep_point(spec: ExperimentSpec, value) -> list[SweepRow]:
    rows = []
    sweep_label = value[0] if isinstance(value, tuple) else value
    if spec.name == "reset":
        durations, writes = [], []
        preserved_all = True
        for rep in range(min(spec.repetitions, 20)):
            reset_ms, write_ms, preserved, _ = run_reset_trial(
                value, spec.seed + rep, spec)
            durations.append(reset_ms)
            writes.append(write_ms)
            preserved_all &= preserved
        if not preserved_all:
            raise StableRegError("reset trial lost the preserved value")
        rows.append(SweepRow(sweep_label, Variant.CASSS.value, "reset",
                             statistics.fmean(durations),
                             statistics.pstdev(durations), 0.0, 0.0, 0))
        rows.append(SweepRow(sweep_label, Variant.CASSS.value, "write",
                             statistics.fmean(writes),
                             statistics.pstdev(writes), 4.0, 0.0, 0))
        return rows
    for variant in VARIANTS_BY_EXPERIMENT[spec.name]:
        scen = scenario_for(spec, value, variant, spec.seed)
        if spec.backend == "sim":
            ops, total_bytes, done, unsuccessful = _run_sim(scen)
        else:
            ops, total_bytes, done, unsuccessful = _run_net(scen)
        for kind in ("read", "write"):
            summary = summarize(ops, kind, total_bytes, done, spec.trim)
            if summary is None:
                continue
            mean, stddev, rounds, bytes_per_op = summary
            rows.append(SweepRow(sweep_label, variant.value, kind, mean,
                                 stddev, rounds, bytes_per_op, unsuccessful))
    return rows


def plot_rows(spec: ExperimentSpec, rows: list[SweepRow], out: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    series: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for row in rows:
        series.setdefault((row.variant, row.op), []).append(
            (row.sweep, row.mean_ms))
    for (variant, op), points in sorted(series.items()):
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o", label=f"{variant} {op}")
    ax.set_xlabel({"readers": "readers", "writers": "writers",
                   "servers": "servers", "objsize": "object size (KiB)",
                   "reset": "servers", "overhead": "servers"}[spec.name])
    ax.set_ylabel("latency (ms)")
    ax.set_title(f"{spec.name} ({spec.backend})")
    if spec.name == "objsize":
        ax.set_xscale("log", base=2)
    ax.grid(True, alpha=0.3)
    ax.legend()
    path = out / f"{spec.name}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
