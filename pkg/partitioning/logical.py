# elasticdb/partitioning/logical.py
"""
Logical repartitioning: records of a key range are deleted from the
source partition and inserted into a partition on the target node by
ordinary (system) transactions, one batch at a time from the top of the
range downwards.

Per batch:
  - the target grows its range over the batch behind a MovedIn marker,
    so requests there are sent back to the source until the batch commits
  - the source fences the batch range and waits for its writers to drain
  - visible records are read, tombstoned at the source and inserted at
    the target inside one system transaction (with MGL-RX the mover also
    holds the source partition R lock and X locks on the batch keys)
  - on commit the source range shrinks and a forward pointer carrying
    the commit ts keeps the old copy readable for older snapshots
  - once those snapshots are gone the old records are purged

Conflicts abort the batch, which is retried.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import simpy

from elasticdb.cluster.messages import CONTROL_BYTES
from elasticdb.cluster.monitor import Breakdown
from elasticdb.concurrency.locks import LockMode, key_resource, partition_resource
from elasticdb.concurrency.txn import Transaction, TxnKind
from elasticdb.concurrency.wal import WalOp
from elasticdb.core.errors import NodeStandbyError, TransactionAborted, WriteConflict
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import MoveAudit, MovePlan, MoveState, Scheme
from elasticdb.partitioning.forwarding import ForwardPointer, MovedIn
from elasticdb.storage.disk import least_loaded
from elasticdb.storage.partition import Partition, PartitionState

if TYPE_CHECKING:
    from elasticdb.cluster.node import NodeHandle
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master

logger = logging.getLogger("elasticdb.partitioning.logical")

MAX_BATCH_RETRIES = 50


def _top_keys(part: Partition, key_range: KeyRange, n: int) -> list[int]:
    """Up to n highest indexed keys of part inside key_range, ascending."""
    out: list[int] = []
    for seg in reversed(part.segments_for(key_range)):
        keys = seg.keys(key_range)
        out[:0] = keys[-(n - len(out)):]
        if len(out) >= n:
            break
    return out


class LogicalMove:
    def __init__(self, cluster: "Cluster", master: "Master", audit: MoveAudit, part: Partition,
                 target: int, from_key: int, bd: Breakdown | None):
        self.cluster = cluster
        self.env = cluster.env
        self.cfg = cluster.cfg
        self.master = master
        self.audit = audit
        self.part = part
        self.table_id = part.table.table_id
        self.source: "NodeHandle" = cluster.node(part.owner)
        self.dst: "NodeHandle" = cluster.node(target)
        self.from_key = from_key
        self.key_range = KeyRange(from_key, part.key_range.high)
        self.bd = bd
        self.receiver: Partition | None = None
        self.plan: MovePlan | None = None

    # ── driver ───────────────────────────────────────────────

    def run(self):
        env = self.env
        if not self.dst.is_active:
            raise NodeStandbyError(f"move target {self.dst.node_id} is not active")
        plan = self.plan = self.audit.new_plan(Scheme.LOGICAL, self.table_id, self.part.partition_id,
                                               self.source.node_id, self.dst.node_id, self.key_range)
        plan.state, plan.started_at = MoveState.RUNNING, env.now
        self.audit.step(env.now, plan, "start")
        logger.info(f"Logical move {plan.plan_id}: {self.key_range} node {self.source.node_id} "
                    f"-> {self.dst.node_id}")
        self.master.move_started(self.table_id, self.key_range, self.dst.node_id, self.source.node_id)
        self.part.state, self.part.peer = PartitionState.MOVING_OUT, self.dst.node_id

        drains: list[simpy.Event] = []
        hi = self.key_range.high
        while hi > self.from_key:
            candidates = _top_keys(self.part, KeyRange(self.from_key, hi), self.cfg.logical_batch_size + 1)
            if len(candidates) <= self.cfg.logical_batch_size:
                low = self.from_key
            else:
                low = candidates[1]
            batch = KeyRange(low, hi)
            drains.append((yield from self._move_batch(batch)))
            hi = low

        if self.part.partition_id in self.source.partitions:
            self.part.state, self.part.peer = PartitionState.STABLE, None
        plan.state = MoveState.DRAINING
        yield env.all_of(drains)
        self._release_old_segments()
        self.master.move_finished(self.table_id, self.key_range)
        if self.receiver is not None:
            self.receiver.state, self.receiver.peer = PartitionState.STABLE, None
        plan.state, plan.finished_at = MoveState.DONE, env.now
        self.audit.step(env.now, plan, "done", plan.bytes_moved)
        self.audit.release(plan)
        self.cluster.trace.record(env.now, self.source.node_id, "move",
                                  f"logical plan={plan.plan_id} -> {self.dst.node_id}")
        return plan

    # ── one batch ────────────────────────────────────────────

    def _receive(self, batch: KeyRange) -> MovedIn:
        if self.receiver is None:
            disk = least_loaded(self.dst.disks)
            self.receiver = self.cluster.new_partition(self.part.table, self.dst.node_id, batch, disk.disk_id)
            self.receiver.state, self.receiver.peer = PartitionState.MOVING_IN, self.source.node_id
            for seg in self.receiver.segments:
                disk.place(seg.segment_id)
        else:
            self.receiver.extend_to(batch)
        arrival = MovedIn(self.table_id, batch, self.source.node_id)
        self.dst.arrivals.append(arrival)
        return arrival

    def _move_batch(self, batch: KeyRange):
        env, oracle, plan = self.env, self.cluster.oracle, self.plan
        arrival = self._receive(batch)
        gate = self.source.gate(self.table_id)
        for attempt in range(MAX_BATCH_RETRIES):
            fence = gate.fence(batch)
            txn = oracle.begin(kind=TxnKind.SYSTEM)
            txn.participants = {self.source.node_id, self.dst.node_id}
            try:
                yield from self.source.wait(gate.drained(batch), self.bd)
                moved = yield from self._copy(txn, batch)
                yield from self.cluster.transmit(self.source.node_id, self.dst.node_id, CONTROL_BYTES, self.bd)
                yield from self.source.prepare(txn, self.bd)
                yield from self.dst.prepare(txn, self.bd)
                yield from self.cluster.transmit(self.dst.node_id, self.source.node_id, CONTROL_BYTES, self.bd)
            except TransactionAborted as e:
                self.source.apply_abort(txn)
                self.dst.apply_abort(txn)
                oracle.abort(txn)
                gate.lift(fence)
                plan.retries += 1
                logger.debug(f"Logical move {plan.plan_id}: batch {batch} retry {attempt + 1} ({e})")
                yield env.timeout(self.cfg.net_base_latency * (attempt + 1))
                continue
            ts = oracle.commit(txn)
            self.source.apply_commit(txn, ts)
            self.dst.apply_commit(txn, ts)
            self._switch_owner(batch, ts, arrival)
            gate.lift(fence)
            plan.records_moved += len(moved)
            plan.payload_moved += sum(size for _, _, size in moved)
            plan.bytes_moved += len(moved) * self.part.table.record_size
            self.audit.step(env.now, plan, "batch", len(moved) * self.part.table.record_size)
            return self._on_drained(batch, moved, ts, arrival)
        raise WriteConflict(0, f"logical move batch {batch} kept conflicting")

    def _copy(self, txn: Transaction, batch: KeyRange):
        """Read, tombstone and re-insert the batch; returns [(key, payload, size)]."""
        cfg, source, dst, part = self.cfg, self.source, self.dst, self.part
        if source.engine.uses_locks:
            yield from source.lock(txn, partition_resource(part.partition_id), LockMode.R, self.bd)
        keys = [k for seg in part.segments_for(batch) for k in seg.keys(batch)]
        if source.engine.uses_locks:
            for key in keys:
                yield from source.lock(txn, key_resource(self.table_id, key), LockMode.X, self.bd)

        moved: list[tuple[int, bytes, int]] = []
        pages: dict = {}
        for key in keys:
            seg = part.locate_segment(key)
            version = source.engine.read(txn, seg.chain(key))
            if version is None:
                continue
            moved.append((key, version.payload, version.size))
            pages.setdefault(seg.page_of(key), seg.home)
        yield from source.work(len(keys) * cfg.cpu_per_record_scan + len(moved) * cfg.cpu_per_record_move,
                               part, self.bd)
        for page, home in pages.items():
            yield from source.read_page(page, home, True, part, self.bd)
        # Validate: nothing foreign may sit in the batch range on the source.
        for key in keys:
            chain = part.locate_segment(key).chain(key)
            if chain and not chain[-1].committed and chain[-1].creator_txn != txn.txn_id:
                raise WriteConflict(txn.txn_id, f"key {key} has a pending foreign write")
        for key, _, _ in moved:
            source.stage_write(txn, part, key, b"", deleted=True)

        nbytes = len(moved) * part.table.record_size
        yield from self.cluster.transmit(source.node_id, dst.node_id, CONTROL_BYTES + nbytes, self.bd)
        yield from dst.work(len(moved) * cfg.cpu_per_record_move + cfg.cpu_per_message, self.receiver, self.bd)
        touched: dict = {}
        for key, payload, _ in moved:
            dst.stage_write(txn, self.receiver, key, payload)
            seg = self.receiver.route_in_partition(key)
            touched.setdefault(seg.page_of(key), seg.home)
        for page, home in touched.items():
            yield from dst.read_page(page, home, True, self.receiver, self.bd)
        return moved

    def _switch_owner(self, batch: KeyRange, ts: int, arrival: MovedIn) -> None:
        """Commit point of a batch: the range now belongs to the target."""
        part, source = self.part, self.source
        if part.key_range.low < batch.low:
            part.shrink_to(KeyRange(part.key_range.low, batch.low))
        else:
            source.partitions.pop(part.partition_id, None)
        done = self.env.event()
        done.succeed()
        source.forwards.append(ForwardPointer(self.table_id, part.partition_id, batch, self.dst.node_id,
                                              self.env.now, done, move_ts=ts, old_partition=part))
        arrival.move_ts = ts
        source.wal.append(0, part.partition_id, WalOp.CHECKPOINT, None, before=batch.low, after=batch.high)

    def _on_drained(self, batch: KeyRange, moved, ts: int, arrival: MovedIn) -> simpy.Event:
        drained = self.env.event()
        part, source = self.part, self.source

        def cleanup() -> None:
            source.forwards[:] = [fp for fp in source.forwards
                                  if not (fp.old_partition is part and fp.key_range == batch)]
            self.dst.arrivals.remove(arrival)
            for seg in part.segments_for(batch):
                for key in seg.keys(batch):
                    seg.drop(key)
            self.audit.step(self.env.now, self.plan, "drained")
            drained.succeed()

        if source.engine.uses_locks:
            cleanup()
        else:
            self.cluster.oracle.on_drained(ts, cleanup)
        return drained

    def _release_old_segments(self) -> None:
        """After the last drain: free source segments that no longer hold the partition's keys."""
        part, source = self.part, self.source
        if part.partition_id in source.partitions:
            gone = part.trim_segments()
        else:
            gone = part.segments
            for seg in gone:
                part.detach_segment(seg)
        for seg in gone:
            source.buffer.drop_segment(seg.segment_id)
            self.cluster.node(seg.home[0]).disks[seg.home[1]].remove(seg.segment_id)


def move_logical(cluster: "Cluster", master: "Master", audit: MoveAudit, part: Partition, target: int,
                 from_key: int, bd: Breakdown | None = None):
    """Move [from_key, high) of `part` to node `target` record by record; returns the MovePlan."""
    return (yield from LogicalMove(cluster, master, audit, part, target, from_key, bd).run())
