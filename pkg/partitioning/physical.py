# elasticdb/partitioning/physical.py
"""
Physical repartitioning: whole segments change disks, never owners.

The owning node keeps query control and its top index; only the
segment's home (node, disk) changes, which is the logical-to-physical
page mapping. Later page misses on a moved segment become remote page
reads. No transactions are involved.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from elasticdb.cluster.monitor import Breakdown
from elasticdb.core.errors import NodeStandbyError, StorageFullError
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import MoveAudit, MovePlan, MoveState, Scheme
from elasticdb.storage.disk import least_loaded
from elasticdb.storage.partition import Partition
from elasticdb.storage.segment import Segment

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.partitioning.physical")


def copy_segment(cluster: "Cluster", src: tuple[int, int], dst: tuple[int, int], pages: int,
                 bd: Breakdown | None = None):
    """Stream `pages` pages from disk src to disk dst in page-sized messages."""
    page_size = cluster.cfg.page_size
    src_node, dst_node = cluster.node(src[0]), cluster.node(dst[0])
    yield from src_node.disk_io(src[1], reads=pages, bd=bd)
    if src[0] != dst[0]:
        for _ in range(pages):
            yield from cluster.transmit(src[0], dst[0], page_size, bd)
    yield from dst_node.disk_io(dst[1], writes=pages, bd=bd)


def relocate_segment(cluster: "Cluster", owner_id: int, seg: Segment, dst: tuple[int, int],
                     bd: Breakdown | None = None):
    """Copy one segment to `dst` and repoint its pages there (owner unchanged)."""
    owner = cluster.node(owner_id)
    for home in owner.buffer.flush_segment(seg.segment_id):
        yield from owner.write_back(home, bd)
    old = seg.home
    yield from copy_segment(cluster, old, dst, seg.pages_per_segment, bd)
    cluster.node(dst[0]).disks[dst[1]].place(seg.segment_id)
    cluster.node(old[0]).disks[old[1]].remove(seg.segment_id)
    seg.home = dst
    owner.buffer.rehome_segment(seg.segment_id, dst)


def move_physical(cluster: "Cluster", audit: MoveAudit, part: Partition, segments: list[Segment],
                  target: int, bd: Breakdown | None = None):
    """Relocate `segments` of `part` onto node `target`; returns the finished MovePlan."""
    env = cluster.env
    dst_node = cluster.node(target)
    if not dst_node.is_active:
        raise NodeStandbyError(f"move target {target} is not active")
    key_range = KeyRange(min(s.key_range.low for s in segments), max(s.key_range.high for s in segments))
    plan: MovePlan = audit.new_plan(Scheme.PHYSICAL, part.table.table_id, part.partition_id,
                                    part.owner, target, key_range)
    plan.segments = [s.segment_id for s in segments]
    try:
        disk = least_loaded(dst_node.disks)
        if not disk.has_room(len(segments)):
            raise StorageFullError(f"node {target} has no room for {len(segments)} segments")
    except StorageFullError:
        audit.step(env.now, plan, "refused")
        plan.state = MoveState.ABORTED
        audit.release(plan)
        raise

    plan.state, plan.started_at = MoveState.RUNNING, env.now
    audit.step(env.now, plan, "start")
    logger.info(f"Physical move {plan.plan_id}: {len(segments)} segments of partition "
                f"{part.partition_id} node {part.owner} -> {target}")
    segment_size = cluster.cfg.segment_size
    for seg in segments:
        plan.payload_moved += seg.payload_bytes()
        yield from relocate_segment(cluster, part.owner, seg, (target, disk.disk_id), bd)
        plan.bytes_moved += segment_size
        audit.step(env.now, plan, "copy", segment_size)
    audit.step(env.now, plan, "remap")
    plan.state, plan.finished_at = MoveState.DONE, env.now
    audit.step(env.now, plan, "done", plan.bytes_moved)
    audit.release(plan)
    cluster.trace.record(env.now, part.owner, "move", f"physical plan={plan.plan_id} -> {target}")
    return plan
