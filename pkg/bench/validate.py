# elasticdb/bench/validate.py
"""
`bench validate`: the invariant suite over tiny, seeded clusters.

Checks:
  power_model        exact cluster watts at the two documented corners
  map_coverage       the partition map tiles every TPC-C-lite table after load
  conservation       per scheme and seed, updaters run through a move and
                     the table ends equal to the serial replay of their commits
  snapshot_repeat    a read-only transaction scanning twice during a move
                     sees the same rows both times
  scan_exactly_once  scans running during a move see every key exactly once
  map_after_actions  the map stays sound after every controller action
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from elasticdb.bench.clients import ClientPool, Completion, ReadUpdateWorkload
from elasticdb.bench.tpcc import TpccLite, decode, load_flat_table
from elasticdb.cluster.monitor import NodeStats, PartitionStats
from elasticdb.cluster.node import PowerState
from elasticdb.cluster.runtime import Cluster
from elasticdb.concurrency.txn import TxnMode
from elasticdb.config import ClusterConfig, cluster_config
from elasticdb.coordinator.controller import Action, Controller
from elasticdb.coordinator.master import Master
from elasticdb.coordinator.power import PowerModel
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import Scheme
from elasticdb.partitioning.mover import Mover

logger = logging.getLogger("elasticdb.bench.validate")

TABLE = 1


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}{': ' + self.detail if self.detail else ''}"


def tiny_config(**overrides) -> ClusterConfig:
    """Small pages and segments so a few hundred records span many segments."""
    base = dict(node_count=4, page_size=512, pages_per_segment=4, record_size=32, buffer_pages=64,
                logical_batch_size=16)
    base.update(overrides)
    return cluster_config(**base)


def committed_records(cluster: Cluster) -> Counter:
    """Multiset of (table, key, payload) of the newest committed live versions."""
    records: Counter = Counter()
    for part in cluster.partitions():
        for _, key, chain in part.items():
            newest = next((v for v in reversed(chain) if v.committed), None)
            if newest is not None and not newest.deleted:
                records[(part.table.table_id, key, newest.payload)] += 1
    return records


def _seeded_cluster(cfg: ClusterConfig, seed: int, records: int):
    cluster = Cluster(cfg)
    master = Master(cluster)
    cluster.start([1, 2])
    rng = np.random.default_rng(seed)
    keys = rng.choice(records * 20, size=records, replace=False)
    part = load_flat_table(cluster, master, TABLE, "t", (int(k) for k in keys), 1, cfg.record_size, seed,
                           key_max=records * 20)
    return cluster, master, part, sorted(int(k) for k in keys)


def _updaters(cluster: Cluster, master: Master, seed: int, records: int, clients: int,
              update_ratio: float = 0.5) -> ClientPool:
    pool = ClientPool(cluster, master, ReadUpdateWorkload(TABLE, records * 20, update_ratio), clients,
                      think_time=0.001, seed=seed)
    pool.start()
    return pool


def replay_updates(initial: dict[int, int], completions: list[Completion]) -> dict[int, int]:
    """Serial oracle: every committed update adds one to its key, in any order."""
    expected = dict(initial)
    for c in completions:
        if c.committed and c.name == "update":
            expected[c.key] = expected.get(c.key, 0) + 1
    return expected


def table_values(cluster: Cluster) -> tuple[dict[int, int], int]:
    """Committed value per key of the check table, plus how many keys are stored twice."""
    values: dict[int, int] = {}
    duplicates = 0
    for (table_id, key, payload), n in committed_records(cluster).items():
        if table_id != TABLE:
            continue
        duplicates += n - 1 + (key in values)
        values[key] = decode(payload)
    return values, duplicates


def _stats(node_id: int, cpu: float, partitions: dict[int, float] | None = None) -> NodeStats:
    parts = {pid: PartitionStats(pid, share, 0, 0) for pid, share in (partitions or {}).items()}
    return NodeStats(node_id, (0.0, 1.0), cpu, 0, {0: 0.0}, 0, parts)


# ── checks ───────────────────────────────────────────────────

def check_power_model(cfg: ClusterConfig | None = None) -> CheckResult:
    model = PowerModel.from_config(cfg or cluster_config())
    low = model.cluster_power([(PowerState.ACTIVE, 0.0)] + [(PowerState.STANDBY, 0.0)] * 9)
    high = model.cluster_power([(PowerState.ACTIVE, 1.0)] * 10)
    ok = abs(low - 64.5) <= 1.0 and 260.0 <= high <= 280.0
    return CheckResult("power_model", ok, f"low={low:.1f}W high={high:.1f}W")


def check_map_coverage(seed: int = 42) -> CheckResult:
    cluster = Cluster(tiny_config())
    master = Master(cluster)
    cluster.start([1, 2])
    TpccLite(warehouses=1, divisor=100, seed=seed).load(cluster, master, [1, 2])
    problem = master.pmap.check()
    return CheckResult("map_coverage", problem is None, problem or "")


def check_conservation(scheme: Scheme, seed: int, records: int = 200, clients: int = 4) -> CheckResult:
    """Updaters run through the move; the final table must equal the serial replay of their commits."""
    cluster, master, part, _ = _seeded_cluster(tiny_config(), seed, records)
    env = cluster.env
    initial, _ = table_values(cluster)
    pool = _updaters(cluster, master, seed, records, clients)
    env.run(until=0.02)
    env.run(until=Mover(cluster, master).move(scheme, part, 2, fraction=0.5))
    pool.stop()
    env.run(until=env.now + 0.5)
    name = f"conservation[{scheme.value},seed={seed}]"
    if pool.in_flight:
        return CheckResult(name, False, f"{pool.in_flight} client queries never answered")
    actual, duplicates = table_values(cluster)
    expected = replay_updates(initial, pool.completions)
    if duplicates:
        return CheckResult(name, False, f"{duplicates} keys stored twice")
    if actual != expected:
        wrong = sorted(k for k in expected.keys() | actual.keys() if expected.get(k) != actual.get(k))
        return CheckResult(name, False, f"{len(wrong)} keys differ from the serial replay (first {wrong[0]})")
    problem = master.pmap.check()
    updates = sum(1 for c in pool.completions if c.committed and c.name == "update")
    return CheckResult(name, problem is None, problem or f"{updates} updates")


def check_snapshot_repeat(scheme: Scheme, seed: int, records: int = 200, readers: int = 2,
                          clients: int = 4, pause: float = 2e-3) -> CheckResult:
    """A read-only transaction scanning twice around a pause must see the same rows both times."""
    cluster, master, part, _ = _seeded_cluster(tiny_config(), seed, records)
    env = cluster.env
    full = KeyRange(0, records * 20)
    pairs = 0
    differing = 0

    def body(ctx):
        first = yield from ctx.scan(TABLE, full)
        yield env.timeout(pause)
        second = yield from ctx.scan(TABLE, full)
        return first, second

    def reader(rid: int, move):
        nonlocal pairs, differing
        yield env.timeout(rid * 1e-4)
        while not move.triggered:
            committed, scans = yield from master.run_transaction(body, mode=TxnMode.READ_ONLY)
            if committed:
                pairs += 1
                differing += scans[0] != scans[1]

    pool = _updaters(cluster, master, seed, records, clients, update_ratio=1.0)
    env.run(until=0.01)
    move = Mover(cluster, master).move(scheme, part, 2, fraction=0.5)
    for rid in range(readers):
        env.process(reader(rid, move))
    env.run(until=move)
    pool.stop()
    env.run(until=env.now + 0.5)
    name = f"snapshot_repeat[{scheme.value},seed={seed}]"
    return CheckResult(name, differing == 0, f"{differing} of {pairs} repeated scans differed" if differing else
                       f"{pairs} repeated scans")


def check_scan_exactly_once(scheme: Scheme, seed: int, records: int = 200, scanners: int = 3) -> CheckResult:
    cluster, master, part, keys = _seeded_cluster(tiny_config(), seed, records)
    env = cluster.env
    mover = Mover(cluster, master)
    seen: list[list[int]] = []
    full = KeyRange(0, records * 20)

    def body(ctx):
        return (yield from ctx.scan(TABLE, full))

    def scanner(sid: int, move):
        yield env.timeout(sid * 1e-4)
        while not move.triggered:
            committed, rows = yield from master.run_transaction(body, mode=TxnMode.READ_ONLY)
            if committed:
                seen.append([row[0] for row in rows])

    move = mover.move(scheme, part, 2, fraction=0.5)
    for sid in range(scanners):
        env.process(scanner(sid, move))
    env.run(until=move)
    bad = [s for s in seen if s != keys]
    name = f"scan_exactly_once[{scheme.value},seed={seed}]"
    return CheckResult(name, not bad, f"{len(bad)} of {len(seen)} scans saw a key twice or not at all" if bad else
                       f"{len(seen)} scans")


def check_map_after_actions(scheme: Scheme, seed: int, records: int = 200) -> CheckResult:
    """Overload then idle the cluster; the map must stay sound after every controller action."""
    cluster, master, part, _ = _seeded_cluster(tiny_config(), seed, records)
    before = committed_records(cluster)
    controller = Controller(cluster, Mover(cluster, master), scheme)
    done: list[str] = []
    problems: list[str] = []

    def audit(action: Action) -> None:
        done.append(action.kind.value)
        problem = master.pmap.check()
        if problem:
            problems.append(f"after {action.kind.value}: {problem}")

    controller.on_done(audit)
    hot = [_stats(1, 0.95, {part.partition_id: 0.9}), _stats(2, 0.1)]
    for i in range(1, 5):
        controller.on_stats(float(i), hot)
    cluster.env.run()
    quiet = [_stats(1, 0.05), _stats(2, 0.2)]
    for i in range(5, 12):
        controller.on_stats(float(i), quiet)
    cluster.env.run()

    name = f"map_after_actions[{scheme.value},seed={seed}]"
    final = master.pmap.check()
    if final:
        problems.append(f"at the end: {final}")
    if committed_records(cluster) != before:
        problems.append("records changed")
    if not done:
        problems.append("no controller action completed")
    return CheckResult(name, not problems, "; ".join(problems) or " ".join(done))


def run_validation(seeds: int = 100) -> list[CheckResult]:
    results = [check_power_model(), check_map_coverage()]
    for scheme in Scheme:
        for seed in range(seeds):
            results.append(check_conservation(scheme, seed))
            results.append(check_snapshot_repeat(scheme, seed))
            results.append(check_scan_exactly_once(scheme, seed))
            results.append(check_map_after_actions(scheme, seed))
    for r in results:
        (logger.info if r.ok else logger.error)(r.line())
    return results
