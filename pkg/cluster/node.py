# elasticdb/cluster/node.py
"""
NodeHandle: one simulated shared-nothing node.

What it does:
  - Holds the node's storage (partitions, segments on its disks, buffer
    pool), its concurrency state (engine, lock table, write gates) and
    its write-ahead log.
  - Executes record operations sent by the master and turns every
    storage/concurrency decision into simulated time: CPU on the node's
    core pool, page I/O on its disks, messages on the network.
  - Attributes every waited second to one breakdown category
    (cpu, disk_io, locking, logging, network).

Design decisions:
  - All methods that take time are simpy sub-generators (`yield from`).
  - A request is resolved (local / old copy / redirect / wait / not here)
    before any time passes and resolved again right before it is applied,
    so a move finishing in between is always noticed.
  - Writers register in the table's write gate before their first wait,
    which is what lets a segment move drain them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import simpy

from elasticdb.cluster.messages import OpKind, OpResult, RecordOp, Reply, Unserved
from elasticdb.cluster.monitor import Breakdown, NodeStats, PartitionStats
from elasticdb.concurrency.gate import WriteGate
from elasticdb.concurrency.locks import LockMode, LockTable, key_resource, partition_resource
from elasticdb.concurrency.mvcc import make_engine, mvcc_abort, mvcc_commit
from elasticdb.concurrency.txn import Transaction
from elasticdb.concurrency.wal import Wal, WalOp
from elasticdb.config import ClusterConfig
from elasticdb.core.errors import HelperInactiveError, NodeStandbyError, PowerOffRefused, UnknownPageError
from elasticdb.core.model import KeyRange, PageId, RecordKey, RecordVersion, subtract_ranges
from elasticdb.partitioning.forwarding import ForwardPointer, MovedIn, RouteKind, handle_forwarded
from elasticdb.partitioning.split import segment_pruning
from elasticdb.storage.buffer import BufferPool
from elasticdb.storage.disk import SimDisk
from elasticdb.storage.partition import Partition
from elasticdb.storage.segment import Segment

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.cluster.node")


class PowerState(str, Enum):
    ACTIVE = "active"
    BOOTING = "booting"
    STANDBY = "standby"


@dataclass(eq=False)
class PendingWrite:
    table_id: int
    partition_id: int
    key: int
    chain: list[RecordVersion]
    version: RecordVersion
    op: WalOp


class NodeHandle:
    def __init__(self, node_id: int, cluster: "Cluster", cfg: ClusterConfig):
        self.node_id = node_id
        self.cluster = cluster
        self.cfg = cfg
        self.env: simpy.Environment = cluster.env
        self.power_state = PowerState.STANDBY
        self.ready = self.env.event()
        self.cpu = simpy.Resource(self.env, capacity=cfg.cpu_cores)
        self.disks = [
            SimDisk(node_id, d, cfg.disk_service_time, cfg.disk_iops_cap, cfg.disk_capacity_segments,
                    simpy.Resource(self.env, capacity=1))
            for d in range(cfg.disks_per_node)
        ]
        self.buffer = BufferPool(cfg.buffer_pages)
        self.partitions: dict[int, Partition] = {}
        self.forwards: list[ForwardPointer] = []
        self.arrivals: list[MovedIn] = []
        self.engine = make_engine(cfg.cc_engine, cfg.gc_chain_threshold)
        self.locks = LockTable(node_id)
        self.gates: dict[int, WriteGate] = {}
        self.wal = Wal(node_id, owns=lambda pid: pid in self.partitions)
        self.pending: dict[int, list[PendingWrite]] = {}
        self.remote_segments: dict[int, Segment] = {}
        self.helper_for: set[int] = set()

        self.busy_time = 0.0
        self.net_bytes_sent = 0
        self.active_queries = 0
        self.ops_served = 0
        self._last_busy = 0.0
        self._last_net = 0

    # ── power ────────────────────────────────────────────────

    @property
    def is_active(self) -> bool:
        return self.power_state is PowerState.ACTIVE

    def activate(self) -> None:
        """Immediate activation (initial cluster layout, no boot delay)."""
        self.power_state = PowerState.ACTIVE
        if not self.ready.triggered:
            self.ready.succeed()

    def boot(self, delay: float):
        self.power_state = PowerState.BOOTING
        self.ready = self.env.event()
        yield self.env.timeout(delay)
        self.activate()

    def hosts_data(self) -> bool:
        return bool(self.partitions) or any(d.segments for d in self.disks) or bool(self.forwards)

    def standby(self) -> None:
        if self.hosts_data():
            raise PowerOffRefused(f"node {self.node_id} still hosts data")
        if self.active_queries or self.pending:
            raise PowerOffRefused(f"node {self.node_id} still runs queries")
        if self.helper_for:
            raise PowerOffRefused(f"node {self.node_id} is still a helper for {sorted(self.helper_for)}")
        self.power_state = PowerState.STANDBY
        self.ready = self.env.event()

    def _check_active(self) -> None:
        if self.power_state is PowerState.STANDBY:
            raise NodeStandbyError(f"node {self.node_id} is in standby")

    # ── lookup ───────────────────────────────────────────────

    def gate(self, table_id: int) -> WriteGate:
        gate = self.gates.get(table_id)
        if gate is None:
            gate = self.gates[table_id] = WriteGate(self.env)
        return gate

    def partition_for(self, table_id: int, key: int) -> Partition | None:
        for part in self.partitions.values():
            if part.table.table_id == table_id and key in part.key_range:
                return part
        return None

    def table_partitions(self, table_id: int) -> list[Partition]:
        return sorted((p for p in self.partitions.values() if p.table.table_id == table_id),
                      key=lambda p: p.key_range.low)

    def forward_for(self, table_id: int, key: int) -> ForwardPointer | None:
        for fp in self.forwards:
            if fp.table_id == table_id and key in fp.key_range:
                return fp
        return None

    def arrival_for(self, table_id: int, key: int) -> MovedIn | None:
        for arrival in self.arrivals:
            if arrival.table_id == table_id and key in arrival.key_range:
                return arrival
        return None

    def find_segment(self, table_id: int, key: int) -> Segment | None:
        for part in self.partitions.values():
            if part.table.table_id == table_id:
                seg = part.locate_segment(key)
                if seg is not None and key in seg:
                    return seg
        return None

    def page_home(self, page_id: PageId) -> tuple[int, int]:
        for part in self.partitions.values():
            for seg in part.segments:
                if seg.segment_id == page_id.segment_id:
                    return seg.home
        seg = self.remote_segments.get(page_id.segment_id)
        if seg is not None:
            return seg.home
        raise UnknownPageError(f"node {self.node_id} knows no page {page_id}")

    # ── time-charging primitives ─────────────────────────────

    def work(self, seconds: float, partition: Partition | None = None, bd: Breakdown | None = None,
             category: str = "cpu"):
        """Run `seconds` of CPU on one core of this node."""
        self._check_active()
        start = self.env.now
        with self.cpu.request() as req:
            yield req
            yield self.env.timeout(seconds)
        self.busy_time += seconds
        if partition is not None:
            partition.counters.cpu_cycles += seconds
        if bd is not None:
            bd.add(category, self.env.now - start)

    def disk_io(self, disk_id: int, reads: int = 0, writes: int = 0, bd: Breakdown | None = None,
                category: str = "disk_io"):
        self._check_active()
        disk = self.disks[disk_id]
        start = self.env.now
        with disk.resource.request() as req:
            yield req
            yield self.env.timeout(disk.charge(reads, writes, self.cfg.page_size))
        if bd is not None:
            bd.add(category, self.env.now - start)

    def message_cpu(self, nbytes: int) -> float:
        return self.cfg.cpu_per_message + nbytes * self.cfg.cpu_per_byte

    def read_page(self, page_id: PageId, home: tuple[int, int] | None = None, write: bool = False,
                  partition: Partition | None = None, bd: Breakdown | None = None):
        """Buffer access for one page, charging whatever the access costs."""
        if home is None:
            home = self.page_home(page_id)
        cost = self.buffer.request(page_id, home, write)
        if partition is not None:
            partition.counters.page_requests += 1
        if cost.hit:
            return
        for target in cost.writes:
            yield from self.write_back(target, bd)
        if cost.remote_hit:
            try:
                yield from self.cluster.remote_buffer_fetch(self, bd)
            except HelperInactiveError:
                yield from self._fetch_from_home(home, partition, bd)
        for source in cost.reads:
            yield from self._fetch_from_home(source, partition, bd)
        if cost.spills and self.buffer.remote is not None:
            self.env.process(self.cluster.spill_pages(self, self.buffer.remote.helper, cost.spills))

    def _fetch_from_home(self, home: tuple[int, int], partition: Partition | None, bd: Breakdown | None):
        if home[0] == self.node_id:
            yield from self.disk_io(home[1], reads=1, bd=bd)
        else:
            yield from self.cluster.remote_page_io(self, home, write=False, bd=bd, partition=partition)

    write_page = read_page

    def write_back(self, home: tuple[int, int], bd: Breakdown | None):
        if home[0] == self.node_id:
            yield from self.disk_io(home[1], writes=1, bd=bd)
        else:
            yield from self.cluster.remote_page_io(self, home, write=True, bd=bd)

    def flush_all(self, bd: Breakdown | None = None):
        for home in self.buffer.flush_all():
            yield from self.write_back(home, bd)

    def log_flush(self, nbytes: int, bd: Breakdown | None = None):
        """Make `nbytes` of log durable: local log disk, or the shipping helper."""
        if self.wal.shipping_to is not None:
            try:
                yield from self.cluster.ship_log(self, self.wal.shipping_to, nbytes, bd)
                return
            except HelperInactiveError:
                logger.debug(f"Node {self.node_id}: log helper gone, flushing locally")
        pages = max(1, math.ceil(nbytes / self.cfg.page_size))
        yield from self.disk_io(0, writes=pages, bd=bd, category="logging")

    def wait(self, event: simpy.Event, bd: Breakdown | None, category: str = "locking"):
        start = self.env.now
        try:
            yield event
        finally:
            if bd is not None:
                bd.add(category, self.env.now - start)

    def lock(self, txn: Transaction, resource: tuple, mode: LockMode, bd: Breakdown | None):
        request = self.locks.acquire(txn.txn_id, resource, mode)
        if request.granted:
            return
        ev = self.env.event()
        request.on_grant = lambda r: ev.succeed()
        request.on_abort = lambda r, exc: ev.fail(exc)
        yield from self.wait(ev, bd)

    # ── record operations ────────────────────────────────────

    def handle_op(self, txn: Transaction, op: RecordOp, bd: Breakdown | None = None):
        """Serve one request from the master; returns an OpResult."""
        self._check_active()
        self.active_queries += 1
        try:
            if op.kind is OpKind.SCAN:
                return (yield from self._scan(txn, op, bd))
            return (yield from self._point(txn, op, bd))
        finally:
            self.active_queries -= 1

    def _point(self, txn: Transaction, op: RecordOp, bd: Breakdown | None):
        write = op.kind.writes
        while True:
            route = handle_forwarded(self, txn, op.table_id, op.key, write)
            if route.kind is RouteKind.WAIT:
                yield from self.wait(route.event, bd)
                continue
            if route.kind is RouteKind.LOCAL and write:
                gate = self.gate(op.table_id)
                fence = gate.fence_for(op.key)
                if fence is not None and not gate.holds_in(txn.txn_id, fence.key_range):
                    yield from self.wait(fence.lifted, bd)
                    continue
                gate.register(txn.txn_id, op.key)
            break

        msg_cpu = self.message_cpu(op.request_bytes() + self.cfg.record_size)
        if route.kind is RouteKind.NOT_HERE:
            yield from self.work(msg_cpu, bd=bd)
            return OpResult(Reply.NOT_HERE, hint=route.hint, node_id=self.node_id)
        if route.kind is RouteKind.REDIRECT:
            yield from self.work(msg_cpu, bd=bd)
            return OpResult(Reply.REDIRECT, hint=route.hint, node_id=self.node_id)

        part = route.partition
        locks = 0
        if self.engine.uses_locks and route.kind is RouteKind.LOCAL:
            yield from self.lock(txn, partition_resource(part.partition_id), LockMode.IX if write else LockMode.IR, bd)
            yield from self.lock(txn, key_resource(op.table_id, op.key), LockMode.X if write else LockMode.R, bd)
            locks = 2
        yield from self.work(self.cfg.cpu_per_op + msg_cpu + locks * self.cfg.lock_cpu, part, bd)

        # a move may have committed during the waits
        if route.kind is RouteKind.LOCAL:
            now = handle_forwarded(self, txn, op.table_id, op.key, write)
            seg = now.partition.locate_segment(op.key) if now.kind is RouteKind.LOCAL else None
            if seg is not None:
                page = seg.page_of(op.key) or PageId(seg.segment_id, 0)
                yield from self.read_page(page, seg.home, write, now.partition, bd)
        else:
            seg = next((s for s in route.pointer.old_segments if op.key in s.key_range), None)
            if seg is not None:
                page = seg.page_of(op.key) or PageId(seg.segment_id, 0)
                yield from self.read_page(page, (self.node_id, seg.home[1]), False, None, bd)

        self.ops_served += 1
        if write:
            return self._apply_write(txn, op)
        return self._apply_read(txn, op)

    def _apply_read(self, txn: Transaction, op: RecordOp) -> OpResult:
        route = handle_forwarded(self, txn, op.table_id, op.key, False)
        if route.kind is RouteKind.LOCAL:
            chain = route.partition.segment_lookup(op.key)
        elif route.kind is RouteKind.OLD:
            chain = route.pointer.old_chain(op.key)
        elif route.kind is RouteKind.REDIRECT:
            return OpResult(Reply.REDIRECT, hint=route.hint, node_id=self.node_id)
        else:
            return OpResult(Reply.NOT_HERE, hint=route.hint, node_id=self.node_id)
        version = self.engine.read(txn, chain)
        return OpResult(Reply.OK, None if version is None else version.payload, node_id=self.node_id)

    def _apply_write(self, txn: Transaction, op: RecordOp) -> OpResult:
        route = handle_forwarded(self, txn, op.table_id, op.key, True)
        if route.kind is not RouteKind.LOCAL:
            reply = Reply.NOT_HERE if route.kind is RouteKind.NOT_HERE else Reply.REDIRECT
            return OpResult(reply, hint=route.hint, node_id=self.node_id)
        self.stage_write(txn, route.partition, op.key, op.payload, op.kind is OpKind.DELETE)
        return OpResult(Reply.OK, op.payload, node_id=self.node_id)

    def stage_write(self, txn: Transaction, part: Partition, key: int, payload: bytes,
                    deleted: bool = False) -> RecordVersion | None:
        """Place txn's pending version of key in part and remember it for commit.

        Deleting a key the txn cannot see is a no-op and returns None.
        """
        chain = part.route_in_partition(key).chain(key)
        if deleted and self.engine.read(txn, chain) is None:
            return None
        version = self.engine.write(txn, RecordKey(part.table.table_id, key), payload, chain,
                                    part.table.record_size, deleted)
        if chain is None:
            part.insert_record(key, version)
            chain = part.segment_lookup(key)
            wal_op = WalOp.INSERT
        else:
            wal_op = WalOp.DELETE if deleted else WalOp.UPDATE
        writes = self.pending.setdefault(txn.txn_id, [])
        if not any(w.version is version for w in writes):
            writes.append(PendingWrite(part.table.table_id, part.partition_id, key, chain, version, wal_op))
        txn.touched.add(part.partition_id)
        return version

    def _scan(self, txn: Transaction, op: RecordOp, bd: Breakdown | None):
        """Range read; serves what this node may serve and reports the rest.

        Locks are taken first; the served ranges and the rows are then
        fixed in one instant and only the costs are paid afterwards, so a
        move committing during the waits cannot drop or duplicate keys.
        """
        rows, unserved, pages, served = yield from self.collect_range(txn, op.table_id, op.key_range, bd)
        yield from self.work(self.cfg.cpu_per_op + self.message_cpu(op.request_bytes()), bd=bd)
        for page, home, part in pages:
            yield from self.read_page(page, home, False, part, bd)
        if served:
            yield from self.work(served * self.cfg.cpu_per_record_scan
                                 + len(rows) * self.cfg.record_size * self.cfg.cpu_per_byte, bd=bd)
        self.ops_served += 1
        return OpResult(Reply.OK, rows=rows, unserved=unserved, node_id=self.node_id)

    def collect_range(self, txn: Transaction, table_id: int, key_range: KeyRange, bd: Breakdown | None = None):
        """R-lock the partitions (MGL-RX) then fix rows, page list and unserved pieces in one instant."""
        if self.engine.uses_locks:
            for part in self.table_partitions(table_id):
                if part.key_range.intersects(key_range):
                    yield from self.lock(txn, partition_resource(part.partition_id), LockMode.R, bd)
        return self._collect(txn, RecordOp(OpKind.SCAN, table_id, key_range=key_range))

    def _collect(self, txn: Transaction, op: RecordOp):
        rows: list[tuple[int, bytes]] = []
        unserved: list[Unserved] = []
        pages: list[tuple[PageId, tuple[int, int], Partition | None]] = []
        remaining = [op.key_range]
        snapshot_reads = not self.engine.uses_locks
        served = 0

        def take(chain, key):
            version = self.engine.read(txn, chain)
            if version is not None:
                rows.append((key, version.payload))

        for arrival in self.arrivals:
            if arrival.table_id != op.table_id:
                continue
            if arrival.move_ts is None or (snapshot_reads and txn.snapshot_ts < arrival.move_ts):
                for piece in list(remaining):
                    cut = arrival.key_range.intersection(piece)
                    if cut is not None:
                        unserved.append(Unserved(cut, Reply.NOT_HERE, arrival.source))
                        remaining = subtract_ranges(remaining, cut)

        for piece in list(remaining):
            for part, segments in segment_pruning(self.table_partitions(op.table_id), piece):
                cut = part.key_range.intersection(piece)
                for seg in segments:
                    keys = seg.keys(cut)
                    pages.extend((page, seg.home, part) for page in seg.page_ids(keys))
                    for key in keys:
                        served += 1
                        take(seg.chain(key), key)
                remaining = subtract_ranges(remaining, cut)

        for fp in self.forwards:
            if fp.table_id != op.table_id or fp.move_ts is None:
                continue
            for piece in list(remaining):
                cut = fp.key_range.intersection(piece)
                if cut is None:
                    continue
                if snapshot_reads and txn.snapshot_ts < fp.move_ts:
                    for key, chain in fp.old_items(cut):
                        served += 1
                        take(chain, key)
                else:
                    unserved.append(Unserved(cut, Reply.REDIRECT, fp.target))
                remaining = subtract_ranges(remaining, cut)

        unserved.extend(Unserved(piece, Reply.NOT_HERE) for piece in remaining)
        rows.sort()
        return rows, unserved, pages, served

    # ── commit / abort ───────────────────────────────────────

    def prepare(self, txn: Transaction, bd: Breakdown | None = None):
        """Force this participant's log records for txn (before the commit ts is drawn)."""
        writes = self.pending.get(txn.txn_id)
        if writes:
            yield from self.work(self.cfg.cpu_per_message, bd=bd)
            yield from self.log_flush(len(writes) * self.cfg.wal_record_bytes, bd)

    def apply_commit(self, txn: Transaction, commit_ts: int) -> None:
        """Make txn's writes visible at commit_ts; never yields."""
        oldest = self.cluster.oracle.oldest_active_snapshot()
        for w in self.pending.pop(txn.txn_id, []):
            part = self.partition_for(w.table_id, w.key)
            self.wal.append(txn.txn_id, part.partition_id if part else w.partition_id, w.op, w.key,
                            record_bytes=self.cfg.wal_record_bytes)
            mvcc_commit(w.chain, w.version, commit_ts)
            kept = self.engine.after_commit(w.chain, oldest)
            if kept is not w.chain:
                w.chain[:] = kept
            if not w.chain:
                self._drop_key(w.table_id, w.key)
        self._release(txn)

    def apply_abort(self, txn: Transaction) -> None:
        for w in self.pending.pop(txn.txn_id, []):
            mvcc_abort(w.chain, w.version)
            if not w.chain:
                self._drop_key(w.table_id, w.key)
        self._release(txn)

    def _release(self, txn: Transaction) -> None:
        for gate in self.gates.values():
            gate.release(txn.txn_id)
        self.locks.release_all(txn.txn_id)

    def _drop_key(self, table_id: int, key: int) -> None:
        seg = self.find_segment(table_id, key)
        if seg is not None:
            seg.drop(key)

    # ── stats ────────────────────────────────────────────────

    def report_stats(self, interval: float) -> NodeStats:
        busy = self.busy_time - self._last_busy
        self._last_busy = self.busy_time
        net = self.net_bytes_sent - self._last_net
        self._last_net = self.net_bytes_sent
        cpu = min(1.0, busy / (interval * self.cfg.cpu_cores)) if interval > 0 else 0.0
        partitions = {}
        for pid in sorted(self.partitions):
            c = self.partitions[pid].counters.reset()
            partitions[pid] = PartitionStats(pid, c.cpu_cycles / (interval * self.cfg.cpu_cores),
                                             c.page_requests, c.net_io)
        return NodeStats(
            node_id=self.node_id,
            interval=(self.env.now - interval, self.env.now),
            cpu_utilization=cpu,
            mem_used=len(self.buffer),
            disk_iops={d.disk_id: d.take_interval_ops() / interval for d in self.disks},
            net_bytes=net,
            partitions=partitions,
        )

    def __repr__(self) -> str:
        return f"NodeHandle({self.node_id}, {self.power_state.value}, partitions={sorted(self.partitions)})"
