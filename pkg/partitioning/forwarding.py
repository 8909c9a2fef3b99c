# elasticdb/partitioning/forwarding.py
"""
Forward pointers and the per-request routing decision on a data node.

A ForwardPointer sits on the source node for a range that is moving or
has moved away. A MovedIn marker sits on the target for a range whose
records arrived by logical move; readers with snapshots older than the
move must read the old copy on the source instead.

handle_forwarded() is the single place deciding, for one request, whether
a node serves it locally, from the old copy, sends it on to the new
owner, makes it wait for the copy, or answers "not here".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import simpy

from elasticdb.core.model import KeyRange, RecordVersion
from elasticdb.storage.partition import Partition
from elasticdb.storage.segment import Segment

if TYPE_CHECKING:
    from elasticdb.cluster.node import NodeHandle
    from elasticdb.concurrency.txn import Transaction


@dataclass(eq=False)
class ForwardPointer:
    table_id: int
    partition_id: int
    key_range: KeyRange
    target: int
    installed_at: float
    copy_done: simpy.Event
    move_ts: int | None = None
    old_segments: list[Segment] = field(default_factory=list)
    old_partition: Partition | None = None

    def old_chain(self, key: int) -> list[RecordVersion] | None:
        for seg in self.old_segments:
            if key in seg.key_range:
                return seg.chain(key)
        if self.old_partition is not None:
            seg = self.old_partition.locate_segment(key)
            if seg is not None:
                return seg.chain(key)
        return None

    def old_items(self, key_range: KeyRange):
        if self.old_segments:
            for seg in self.old_segments:
                for key in seg.keys(key_range):
                    yield key, seg.chain(key)
        elif self.old_partition is not None:
            for seg in self.old_partition.segments_for(key_range):
                for key in seg.keys(key_range):
                    yield key, seg.chain(key)


@dataclass(eq=False)
class MovedIn:
    table_id: int
    key_range: KeyRange
    source: int
    move_ts: int | None = None


class RouteKind(str, Enum):
    LOCAL = "local"
    OLD = "old"
    REDIRECT = "redirect"
    WAIT = "wait"
    NOT_HERE = "not_here"


@dataclass
class Route:
    kind: RouteKind
    partition: Partition | None = None
    pointer: ForwardPointer | None = None
    hint: int | None = None
    event: simpy.Event | None = None


def handle_forwarded(node: "NodeHandle", txn: "Transaction", table_id: int, key: int, write: bool) -> Route:
    """Decide how `node` treats a point request for (table_id, key).

    Only snapshot readers (MVCC) are sent to old copies; a locking engine
    always reads the newest committed state, which lives with the new owner.
    """
    snapshot_read = not write and not node.engine.uses_locks
    arrival = node.arrival_for(table_id, key)
    if arrival is not None and (arrival.move_ts is None or (snapshot_read and txn.snapshot_ts < arrival.move_ts)):
        return Route(RouteKind.NOT_HERE, hint=arrival.source)
    fp = node.forward_for(table_id, key)
    part = node.partition_for(table_id, key)
    if part is not None:
        if write and fp is not None and fp.move_ts is None and not node.gate(table_id).holds_in(txn.txn_id, fp.key_range):
            return Route(RouteKind.WAIT, pointer=fp, event=fp.copy_done)
        return Route(RouteKind.LOCAL, partition=part)
    if fp is not None:
        if fp.move_ts is None:
            return Route(RouteKind.WAIT, pointer=fp, event=fp.copy_done)
        if snapshot_read and txn.snapshot_ts < fp.move_ts:
            return Route(RouteKind.OLD, pointer=fp)
        return Route(RouteKind.REDIRECT, pointer=fp, hint=fp.target)
    return Route(RouteKind.NOT_HERE)
