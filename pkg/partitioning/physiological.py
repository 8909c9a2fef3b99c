# elasticdb/partitioning/physiological.py
"""
Physiological repartitioning: segments move between partitions on
different nodes, carrying their own primary-key index, and ownership of
their key range moves with them.

Per segment (highest sub-range first) the move runs six steps:
  1. mark     master installs a dual pointer, source a forward pointer
  2. lock     new writers to the range are fenced, registered ones drain
  3. copy     segment pages stream to the target disk
  4. attach   target top index takes the segment, source detaches it,
              the move commits (move_ts) and the fence lifts
  5. master   routing now prefers the target for good
  6. drained  once no snapshot older than move_ts is alive, the forward
              pointer, old copy and old map pointer are removed

Steps 1-5 of the next segment may overlap step 6 of earlier ones.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import simpy

from elasticdb.cluster.monitor import Breakdown
from elasticdb.concurrency.locks import LockMode, partition_resource
from elasticdb.concurrency.txn import TxnKind, TxnStatus
from elasticdb.concurrency.wal import WalOp
from elasticdb.core.errors import MoveAborted, NodeStandbyError
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import MoveAudit, MovePlan, MoveState, Scheme
from elasticdb.partitioning.forwarding import ForwardPointer
from elasticdb.partitioning.physical import copy_segment
from elasticdb.storage.disk import SimDisk, least_loaded
from elasticdb.storage.partition import Partition, PartitionState
from elasticdb.storage.segment import Segment

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master

logger = logging.getLogger("elasticdb.partitioning.physiological")


class _Receiver:
    """Target-side partition, created by the first segment that arrives."""

    def __init__(self, cluster: "Cluster", source: Partition, target: int):
        self.cluster = cluster
        self.source = source
        self.target = target
        self.partition: Partition | None = None

    def attach(self, clone: Segment) -> None:
        if self.partition is None:
            cfg = self.cluster.cfg
            part = Partition(self.cluster.new_partition_id(), self.source.table, self.target, clone.key_range,
                             self.cluster.new_segment_id, cfg.pages_per_segment, cfg.page_size,
                             segments=[clone])
            part.state, part.peer = PartitionState.MOVING_IN, self.source.owner
            self.cluster.node(self.target).partitions[part.partition_id] = part
            self.partition = part
        else:
            self.partition.attach_segment(clone)
            self.partition.extend_to(clone.key_range)


def move_physiological(cluster: "Cluster", master: "Master", audit: MoveAudit, part: Partition,
                       target: int, from_key: int, bd: Breakdown | None = None):
    """Move [from_key, high) of `part` to node `target`; returns the finished MovePlan."""
    env = cluster.env
    source = cluster.node(part.owner)
    dst_node = cluster.node(target)
    if not dst_node.is_active:
        raise NodeStandbyError(f"move target {target} is not active")
    part.split_segment_at(from_key)
    moving = [s for s in part.segments if s.key_range.low >= from_key]
    key_range = KeyRange(from_key, part.key_range.high)
    plan = audit.new_plan(Scheme.PHYSIOLOGICAL, part.table.table_id, part.partition_id,
                          source.node_id, target, key_range)
    plan.segments = [s.segment_id for s in moving]
    disk = least_loaded(dst_node.disks)
    if not disk.has_room(len(moving)):
        audit.step(env.now, plan, "refused")
        plan.state = MoveState.ABORTED
        audit.release(plan)
        raise MoveAborted(f"node {target} has no room for {len(moving)} segments")

    plan.state, plan.started_at = MoveState.RUNNING, env.now
    audit.step(env.now, plan, "start")
    logger.info(f"Physiological move {plan.plan_id}: {key_range} ({len(moving)} segments) "
                f"node {source.node_id} -> {target}")
    part.state, part.peer = PartitionState.MOVING_OUT, target
    receiver = _Receiver(cluster, part, target)
    drains: list[simpy.Event] = []
    try:
        for seg in reversed(moving):
            drained = yield from _move_segment(cluster, master, audit, plan, part, seg, receiver, disk, bd)
            drains.append(drained)
    finally:
        if part.partition_id in source.partitions:
            part.state, part.peer = PartitionState.STABLE, None

    plan.state = MoveState.DRAINING
    yield env.all_of(drains)
    if receiver.partition is not None:
        receiver.partition.state, receiver.partition.peer = PartitionState.STABLE, None
    plan.state, plan.finished_at = MoveState.DONE, env.now
    audit.step(env.now, plan, "done", plan.bytes_moved)
    audit.release(plan)
    cluster.trace.record(env.now, source.node_id, "move", f"physiological plan={plan.plan_id} -> {target}")
    return plan


def _move_segment(cluster: "Cluster", master: "Master", audit: MoveAudit, plan: MovePlan, part: Partition,
                  seg: Segment, receiver: _Receiver, disk: SimDisk, bd: Breakdown | None):
    env, oracle = cluster.env, cluster.oracle
    source = cluster.node(part.owner)
    table_id, rng = part.table.table_id, seg.key_range

    # 1. mark
    master.move_started(table_id, rng, receiver.target, source.node_id)
    fp = ForwardPointer(table_id, part.partition_id, rng, receiver.target, env.now, env.event())
    source.forwards.append(fp)
    audit.step(env.now, plan, "mark")

    # 2. lock
    gate = source.gate(table_id)
    fence = gate.fence(rng)
    mover_txn = None
    if source.engine.uses_locks:
        mover_txn = oracle.begin(kind=TxnKind.SYSTEM)
        yield from source.lock(mover_txn, partition_resource(part.partition_id), LockMode.R, bd)
    yield from source.wait(gate.drained(rng), bd)
    audit.step(env.now, plan, "lock")

    def unlock() -> None:
        gate.lift(fence)
        if mover_txn is not None:
            source.locks.release_all(mover_txn.txn_id)
            oracle.finish(mover_txn, TxnStatus.COMMITTED)

    # 3. copy
    if not disk.has_room():
        unlock()
        source.forwards.remove(fp)
        fp.copy_done.succeed()
        master.move_aborted(table_id, rng)
        audit.step(env.now, plan, "aborted")
        plan.state = MoveState.ABORTED
        audit.release(plan)
        raise MoveAborted(f"node {receiver.target} disk {disk.disk_id} is full")
    for home in source.buffer.flush_segment(seg.segment_id):
        yield from source.write_back(home, bd)
    yield from copy_segment(cluster, seg.home, (receiver.target, disk.disk_id), seg.pages_per_segment, bd)
    segment_size = cluster.cfg.segment_size
    plan.bytes_moved += segment_size
    plan.payload_moved += seg.payload_bytes()
    plan.records_moved += seg.live_record_count()
    audit.step(env.now, plan, "copy", segment_size)

    # 4. attach
    clone = seg.clone()
    clone.home = (receiver.target, disk.disk_id)
    disk.place(seg.segment_id)
    receiver.attach(clone)
    part.detach_segment(seg)
    if part.segments:
        part.shrink_to(KeyRange(part.key_range.low, rng.low))
    else:
        del source.partitions[part.partition_id]
    fp.old_segments = [seg]
    fp.move_ts = oracle.next_commit_ts()
    fp.copy_done.succeed()
    unlock()
    source.wal.append(0, part.partition_id, WalOp.CHECKPOINT, None, before=rng.low, after=rng.high)
    audit.step(env.now, plan, "attach")

    # 5. master
    audit.step(env.now, plan, "master")

    # 6. drained
    drained = env.event()

    def cleanup() -> None:
        source.forwards.remove(fp)
        source.buffer.drop_segment(seg.segment_id)
        cluster.node(seg.home[0]).disks[seg.home[1]].remove(seg.segment_id)
        master.move_finished(table_id, rng)
        audit.step(env.now, plan, "drained")
        drained.succeed()

    if source.engine.uses_locks:
        # Locking readers are redirected to the new owner, never to the old copy.
        cleanup()
    else:
        oracle.on_drained(fp.move_ts, cleanup)
    return drained
