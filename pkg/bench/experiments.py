# elasticdb/bench/experiments.py
"""
Experiment registry: scripted scenarios over a fresh simulated cluster.

What it does:
  - operators              scan / project / remote-edge throughput of one
                           table, local vs buffered vs vectorized vs
                           record-at-a-time remote
  - offload                sort queries run locally, with the sort moved
                           to an idle node, or placed from measured node
                           load, over a client-count sweep
  - mvcc_move              point reads/updates during a segment move,
                           MVCC against MGL-RX over update ratios
  - repartition_<scheme>   TPC-C-lite on 2 nodes, two more nodes booted,
                           half of every partition moved at t=0
  - overhead_breakdown     the physiological run, reported as per-query
                           time categories before and during the move
  - physiological_helpers  the physiological run with log-shipping and
                           remote-buffer helpers attached for the move

Every run returns an ExperimentResult; `write()` turns it into the
artifact directory (metrics.csv, results.csv, summary.csv, moves.log,
decisions.log and, on request, trace.log).

Design decisions:
  - Each measured configuration gets its own cluster, so sweeps never
    share caches or clocks.
  - Time-series rows are relative to the move instant (negative before).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable

import numpy as np

from elasticdb.bench.clients import ClientPool, ReadUpdateWorkload, TpccWorkload
from elasticdb.bench.metrics import MetricsCollector, MetricsRow, emit_csv
from elasticdb.bench.tpcc import TpccLite, load_flat_table
from elasticdb.cluster.monitor import BREAKDOWN_KEYS, Monitor
from elasticdb.cluster.runtime import Cluster
from elasticdb.config import BenchConfig, ClusterConfig, settings
from elasticdb.coordinator.controller import Action, ActionKind
from elasticdb.coordinator.helpers import HelperPool
from elasticdb.coordinator.master import Master
from elasticdb.coordinator.power import NA
from elasticdb.core.errors import (
    ConfigError,
    MigrationTimeout,
    MoveAborted,
    NoHelpersAvailable,
    StorageFullError,
    UnknownExperiment,
)
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import Scheme
from elasticdb.partitioning.mover import Mover
from elasticdb.query.executor import execute
from elasticdb.query.operators import Project, Scan, payload_int, payload_prefix
from elasticdb.query.plan import QueryPlan, build_plan, offload_blocking, plan_placement

logger = logging.getLogger("elasticdb.bench.experiments")

MICRO_TABLE = 100


@dataclass
class RunOptions:
    scheme: Scheme | None = None
    clients: int | None = None
    duration: float | None = None
    repartition_at: float | None = None
    seed: int = 42
    trace: bool = False


@dataclass
class ExperimentResult:
    name: str
    rows: list[MetricsRow] = field(default_factory=list)
    table: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if self.rows:
            written.append(emit_csv(self.rows, out / "metrics.csv"))
        if self.table:
            written.append(_write_table(self.table, out / "results.csv"))
        summary = [{"key": k, "value": v} for k, v in self.summary.items()]
        written.append(_write_table(summary, out / "summary.csv"))
        for name, text in self.artifacts.items():
            path = out / name
            path.write_text(text)
            written.append(path)
        return written


def _cell(value: Any) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_table(records: list[dict[str, Any]], path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(records[0]))
        for record in records:
            writer.writerow([_cell(v) for v in record.values()])
    return path


def _cluster(cfg: ClusterConfig, opts: RunOptions) -> tuple[Cluster, Master]:
    cluster = Cluster(cfg.model_copy(update={"rng_seed": opts.seed}), trace=opts.trace)
    return cluster, Master(cluster)


def live_storage(cluster: Cluster) -> int:
    """Bytes of every stored version, old copies kept for draining readers included."""
    total = 0
    for node in cluster.nodes.values():
        total += sum(p.live_bytes() for p in node.partitions.values())
        total += sum(s.live_bytes() for fp in node.forwards for s in fp.old_segments)
    return total


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


# ── operators ────────────────────────────────────────────────

OPERATOR_VARIANTS: dict[str, dict[str, Any]] = {
    "local_scan": {"consumer": None, "vectorized": True, "buffered": True},
    "local_scan_project": {"consumer": 1, "vectorized": True, "buffered": True},
    "remote_buffered": {"consumer": 2, "vectorized": True, "buffered": True},
    "remote_vectorized": {"consumer": 2, "vectorized": True, "buffered": False},
    "remote_classic": {"consumer": 2, "vectorized": False, "buffered": False},
}


def _operator_run(cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions, consumer: int | None,
                  vectorized: bool, buffered: bool) -> dict[str, Any]:
    cluster, master = _cluster(cfg, opts)
    cluster.start([1, 2])
    n = bench.operator_records
    load_flat_table(cluster, master, MICRO_TABLE, "micro", range(n), 1, cfg.record_size, opts.seed)
    root = Scan(1, MICRO_TABLE, KeyRange(0, n))
    if consumer is not None:
        root = Project(consumer, root, payload_prefix(16))
    proc = cluster.env.process(execute(cluster, QueryPlan(root), master, vectorized=vectorized,
                                       buffered_edges=buffered))
    result = cluster.env.run(until=proc)
    return {
        "records": len(result.rows),
        "elapsed_s": result.elapsed,
        "records_per_s": result.throughput,
        "round_trips": result.round_trips,
        "bytes_shipped": result.bytes_shipped,
    }


def _operators(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions) -> ExperimentResult:
    result = ExperimentResult(name)
    rates = {}
    for variant, spec in OPERATOR_VARIANTS.items():
        measured = _operator_run(cfg, bench, opts, **spec)
        rates[variant] = measured["records_per_s"]
        result.table.append({"variant": variant, **measured})
        logger.info(f"operators {variant}: {measured['records_per_s']:.0f} records/s")
    ordered = list(rates.values())
    result.summary.update({f"{v}_records_per_s": r for v, r in rates.items()})
    result.summary["classic_penalty"] = rates["remote_vectorized"] / rates["remote_classic"]
    result.summary["ordering_holds"] = all(a > b for a, b in zip(ordered, ordered[1:]))
    return result


# ── offload ──────────────────────────────────────────────────

OFFLOAD_PLACEMENTS = ("local", "offloaded", "adaptive")


def _offload_run(cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions, clients: int, placement: str,
                 duration: float) -> tuple[float, float]:
    """Sort queries under one placement; returns (queries/s, share of plans that left the scan node).

    `adaptive` places each query from the monitor's latest measured node stats.
    """
    cluster, master = _cluster(cfg, opts)
    env = cluster.env
    cluster.start([1, 2])
    n = bench.offload_records
    load_flat_table(cluster, master, MICRO_TABLE, "micro", range(n), 1, cfg.record_size, opts.seed)
    monitor = Monitor(cluster, bench.offload_monitor_interval)
    if placement == "adaptive":
        monitor.start()
    done: list[float] = []
    moved: list[bool] = []

    def client(cid: int):
        rng = np.random.default_rng([opts.seed, cid])
        yield env.timeout(float(rng.uniform(0, bench.offload_think_time)))
        while True:
            plan = build_plan(master.pmap, MICRO_TABLE, KeyRange(0, n), sort_key=payload_int)
            if placement == "offloaded":
                offload_blocking(plan, 2, cfg)
            elif placement == "adaptive":
                plan_placement(plan, monitor.history[-1] if monitor.history else {}, cfg, n)
            moved.append(plan.nodes() != {1})
            answer = yield from execute(cluster, plan, master)
            done.append(answer.finished_at)
            yield env.timeout(bench.offload_think_time)

    for cid in range(clients):
        env.process(client(cid))
    env.run(until=duration)
    return len(done) / duration, (sum(moved) / len(moved) if moved else 0.0)


def _offload(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions) -> ExperimentResult:
    cfg = cfg.model_copy(update={"cpu_per_sort_unit": bench.offload_sort_unit})
    duration = opts.duration or bench.offload_duration
    sweep = [opts.clients] if opts.clients else bench.offload_concurrency
    result = ExperimentResult(name)
    crossover = None
    for clients in sweep:
        runs = {p: _offload_run(cfg, bench, opts, clients, p, duration) for p in OFFLOAD_PLACEMENTS}
        local, remote, adaptive = (runs[p][0] for p in OFFLOAD_PLACEMENTS)
        result.table.append({"clients": clients, "local_qps": local, "offloaded_qps": remote,
                             "adaptive_qps": adaptive, "adaptive_offload_share": runs["adaptive"][1]})
        logger.info(f"offload c={clients}: local {local:.2f} q/s, offloaded {remote:.2f} q/s, "
                    f"adaptive {adaptive:.2f} q/s ({runs['adaptive'][1]:.0%} moved)")
        if crossover is None and remote > local:
            crossover = clients
    if crossover is None:
        logger.info("Offload never overtook the local plan")
    else:
        logger.info(f"Offload crossover at concurrency {crossover}")
    result.summary["crossover_clients"] = crossover
    return result


# ── mvcc_move ────────────────────────────────────────────────

def _mvcc_move_run(cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions, engine: str,
                   ratio: float) -> dict[str, Any]:
    cluster, master = _cluster(cfg.model_copy(update={"cc_engine": engine}), opts)
    env = cluster.env
    cluster.start([1, 2])
    n = bench.mvcc_move_records
    part = load_flat_table(cluster, master, MICRO_TABLE, "micro", range(n), 1, cfg.record_size, opts.seed)
    mover = Mover(cluster, master)
    pool = ClientPool(cluster, master, ReadUpdateWorkload(MICRO_TABLE, n, ratio),
                      opts.clients or bench.mvcc_move_clients, bench.mvcc_move_think_time, opts.seed,
                      bench.max_retries)
    pool.start()
    storage: list[int] = []
    window: dict[str, float] = {}

    def sample_storage():
        while "end" not in window:
            storage.append(live_storage(cluster))
            yield env.timeout(bench.storage_sample_interval)

    def scenario():
        yield env.timeout(bench.mvcc_move_at)
        window["start"] = env.now
        env.process(sample_storage())
        plan = yield mover.move(Scheme.PHYSIOLOGICAL, part, 2, fraction=bench.migrate_fraction)
        window["end"] = env.now
        pool.stop()
        return plan

    plan = env.run(until=env.process(scenario()))
    start, end = window["start"], window["end"]
    answered = [c for c in pool.completions if start <= c.answered_at <= end and c.committed]
    span = max(end - start, 1e-9)
    return {
        "engine": engine,
        "update_ratio": ratio,
        "throughput_qps": len(answered) / span,
        "move_s": end - start,
        "peak_storage_bytes": max(storage),
        "bytes_moved": plan.bytes_moved,
        "aborts": pool.aborts,
    }


def _mvcc_move(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions) -> ExperimentResult:
    result = ExperimentResult(name)
    for ratio in bench.update_ratios:
        pair = {engine: _mvcc_move_run(cfg, bench, opts, engine, ratio) for engine in ("mvcc", "mgl")}
        result.table.extend(pair.values())
        mvcc, mgl = pair["mvcc"]["throughput_qps"], pair["mgl"]["throughput_qps"]
        advantage = (mvcc - mgl) / mgl if mgl > 0 else None
        result.summary[f"advantage_at_{int(round(ratio * 100))}"] = advantage
        logger.info(f"mvcc_move r={ratio:.2f}: MVCC {mvcc:.1f} q/s, MGL-RX {mgl:.1f} q/s")
    return result


# ── repartitioning ───────────────────────────────────────────

def _window_rows(rows: list[MetricsRow], low: float, high: float) -> list[MetricsRow]:
    return [r for r in rows if low < r.time_s <= high]


def _phase_breakdown(rows: list[MetricsRow]) -> dict[str, float | None]:
    """Per-query ms per category over rows, weighted by their query counts."""
    weight = sum(r.qps for r in rows)
    if weight <= 0:
        return {k: None for k in BREAKDOWN_KEYS}
    return {k: sum(r.breakdown_ms[k] * r.qps for r in rows) / weight for k in BREAKDOWN_KEYS}


def _repartition(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions,
                 scheme: Scheme = Scheme.PHYSIOLOGICAL, helpers: int = 0) -> ExperimentResult:
    t0 = opts.repartition_at if opts.repartition_at is not None else bench.warmup + bench.pre_window
    post_window = opts.duration if opts.duration is not None else bench.post_window
    horizon = t0 + post_window
    start_nodes = list(range(1, bench.start_nodes + 1))
    new_nodes = list(range(bench.start_nodes + 1, bench.start_nodes + bench.target_nodes + 1))
    if len(start_nodes) + len(new_nodes) + helpers > cfg.node_count:
        raise ConfigError([f"node_count: {cfg.node_count} nodes cannot hold {len(start_nodes)} start, "
                           f"{len(new_nodes)} target and {helpers} helper nodes"])

    cluster, master = _cluster(cfg, opts)
    env = cluster.env
    cluster.start(start_nodes)
    tpcc = TpccLite(bench.warehouses, bench.desk_divisor, opts.seed)
    tpcc.load(cluster, master, start_nodes, cfg.initial_partitions_per_table)
    mover = Mover(cluster, master)
    pool = ClientPool(cluster, master, TpccWorkload(tpcc, bench.query_mix), opts.clients or bench.clients,
                      bench.think_time, opts.seed, bench.max_retries)
    collector = MetricsCollector(cluster, pool, bench.metrics_interval,
                                 bytes_moved=lambda: sum(p.bytes_moved for p in mover.plans), origin=t0)
    helper_pool = HelperPool(cluster)
    decisions: list[Action] = []
    window: dict[str, float] = {}
    payload_before: dict[str, int] = {}

    def chain(src: int, dst: int):
        for part in sorted(cluster.node(src).partitions.values(), key=lambda p: p.partition_id):
            decisions.append(Action(env.now, "schedule", ActionKind.MOVE, dst, source=src,
                                    partition_id=part.partition_id))
            try:
                yield mover.move(scheme, part, dst, fraction=bench.migrate_fraction)
            except (MoveAborted, StorageFullError) as e:
                logger.warning(f"Move of partition {part.partition_id} to node {dst} failed: {e}")

    def scenario():
        yield env.timeout(max(0.0, t0 - cfg.boot_delay))
        boots = []
        for nid in new_nodes:
            decisions.append(Action(env.now, "schedule", ActionKind.POWER_ON, nid))
            boots.append(cluster.power_on(nid))
        if helpers:
            boots.append(env.process(helper_pool.attach(helpers)))
        yield env.all_of(boots)
        if env.now < t0:
            yield env.timeout(t0 - env.now)
        window["start"] = env.now
        payload_before["bytes"] = sum(p.payload_bytes() for p in cluster.partitions())
        logger.info(f"{name}: moving {bench.migrate_fraction:.0%} of every partition at t={env.now:.1f}")
        yield env.all_of([env.process(chain(src, dst)) for src, dst in zip(start_nodes, new_nodes)])
        window["end"] = env.now
        logger.info(f"{name}: moves finished after {env.now - window['start']:.2f}s")
        if helpers:
            helper_pool.detach()

    pool.start()
    collector.start()
    scripted = env.process(scenario())
    env.run(until=horizon + bench.metrics_interval / 2)
    if "end" not in window:
        # moves outlast the nominal window
        logger.info(f"{name}: moves still running at t={env.now:.1f}, extending the run")
        env.run(until=env.any_of([scripted, env.timeout(max(0.0, t0 + bench.migration_timeout - env.now))]))
        if "end" not in window:
            pool.stop()
            raise MigrationTimeout(f"{name}: moves unfinished {bench.migration_timeout:.0f}s after t={t0:.1f}")
    settle = 2 * bench.metrics_interval
    settled = t0 + math.ceil((window["end"] - t0 + settle + post_window) / bench.metrics_interval) * bench.metrics_interval
    if settled > horizon:
        horizon = settled
        env.run(until=horizon + bench.metrics_interval / 2)
    pool.stop()

    rows = collector.rows
    result = ExperimentResult(name, rows=rows)
    end = window.get("end")
    end_rel = None if end is None else end - t0
    pre = _window_rows(rows, -bench.pre_window, 0.0)
    during = _window_rows(rows, 0.0, end_rel if end_rel is not None else horizon - t0)
    post = [] if end_rel is None else _window_rows(rows, end_rel + settle, horizon - t0)
    plans = mover.plans
    moved_payload = sum(p.payload_moved for p in plans)
    energy_during = sum(r.power_w * bench.metrics_interval for r in during)
    queries_during = sum(r.qps * bench.metrics_interval for r in during)
    result.summary.update({
        "scheme": scheme.value,
        "helpers": ";".join(str(h) for h in helper_pool.helpers) or None,
        "move_start_s": window.get("start"),
        "move_end_s": end,
        "migration_s": None if end is None else end - window["start"],
        "run_end_s": horizon,
        "bytes_moved": sum(p.bytes_moved for p in plans),
        "records_moved": sum(p.records_moved for p in plans),
        "payload_moved": moved_payload,
        "payload_before": payload_before.get("bytes"),
        "moved_share": moved_payload / payload_before["bytes"] if payload_before.get("bytes") else None,
        "pre_qps": _mean([r.qps for r in pre]),
        "during_qps": _mean([r.qps for r in during]),
        "post_qps": _mean([r.qps for r in post]),
        "min_qps_after_start": min((r.qps for r in during), default=None),
        "peak_avg_response_ms": max((r.avg_response_ms for r in during), default=None),
        "pre_power_w": _mean([r.power_w for r in pre]),
        "during_power_w": _mean([r.power_w for r in during]),
        "post_power_w": _mean([r.power_w for r in post]),
        "during_energy_per_query_j": energy_during / queries_during if queries_during else None,
        "owners_after": ";".join(str(n) for n in sorted(master.pmap.nodes_of())),
        "aborts": pool.aborts,
        "failed": pool.failed,
    })
    for phase, phase_rows in (("quiescent", pre), ("migration", during)):
        for k, v in _phase_breakdown(phase_rows).items():
            result.summary[f"bd_{k}_{phase}_ms"] = v
    result.artifacts["moves.log"] = mover.audit.export()
    result.artifacts["decisions.log"] = "".join(a.log_line() + "\n" for a in decisions)
    if opts.trace:
        result.artifacts["trace.log"] = cluster.trace.export()
    return result


def _overhead_breakdown(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions) -> ExperimentResult:
    result = _repartition(name, cfg, bench, opts, scheme=opts.scheme or Scheme.PHYSIOLOGICAL)
    for phase in ("quiescent", "migration"):
        result.table.append({"phase": phase, **{f"{k}_ms": result.summary[f"bd_{k}_{phase}_ms"]
                                                for k in BREAKDOWN_KEYS}})
    return result


def _helpers(name: str, cfg: ClusterConfig, bench: BenchConfig, opts: RunOptions) -> ExperimentResult:
    try:
        return _repartition(name, cfg, bench, opts, scheme=Scheme.PHYSIOLOGICAL, helpers=bench.helpers)
    except NoHelpersAvailable as e:
        raise ConfigError([f"helpers: {e}"]) from e


Experiment = Callable[[str, ClusterConfig, BenchConfig, RunOptions], ExperimentResult]

EXPERIMENTS: dict[str, Experiment] = {
    "operators": _operators,
    "offload": _offload,
    "mvcc_move": _mvcc_move,
    "repartition_physical": partial(_repartition, scheme=Scheme.PHYSICAL),
    "repartition_logical": partial(_repartition, scheme=Scheme.LOGICAL),
    "repartition_physiological": partial(_repartition, scheme=Scheme.PHYSIOLOGICAL),
    "overhead_breakdown": _overhead_breakdown,
    "physiological_helpers": _helpers,
}


def run_experiment(name: str, cfg: ClusterConfig | None = None, bench: BenchConfig | None = None,
                   opts: RunOptions | None = None) -> ExperimentResult:
    if name not in EXPERIMENTS:
        raise UnknownExperiment(f"Unknown experiment: {name} (choose from {', '.join(EXPERIMENTS)})")
    cfg = cfg or settings.cluster
    bench = bench or settings.bench
    opts = opts or RunOptions()
    if opts.scheme is not None and name.startswith("repartition_") and opts.scheme.value != name.split("_", 1)[1]:
        logger.warning(f"--scheme {opts.scheme.value} ignored, {name} fixes its scheme")
    logger.info(f"Running experiment {name} (seed {opts.seed})")
    return EXPERIMENTS[name](name, cfg, bench, opts)
