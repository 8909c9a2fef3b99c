# elasticdb/storage/disk.py
"""
Simulated disks: service-time / IOPS accounting plus segment placement.

A SimDisk never sleeps by itself. `charge()` books the ops and returns
the virtual time they occupy; the owning node holds the disk's simpy
Resource for that long, which is what makes concurrent I/O queue.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import simpy

from elasticdb.core.errors import StorageFullError

logger = logging.getLogger("elasticdb.storage.disk")


@dataclass
class SimDisk:
    node_id: int
    disk_id: int
    service_time: float
    iops_cap: float
    capacity_segments: int
    resource: simpy.Resource | None = None

    reads: int = 0
    writes: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    busy_time: float = 0.0
    interval_ops: int = 0
    segments: set[int] = field(default_factory=set)

    @property
    def op_time(self) -> float:
        return max(self.service_time, 1.0 / self.iops_cap)

    @property
    def ops(self) -> int:
        return self.reads + self.writes

    def charge(self, reads: int = 0, writes: int = 0, page_size: int = 0) -> float:
        """Book page ops; returns the virtual seconds they keep the disk busy."""
        self.reads += reads
        self.writes += writes
        self.bytes_read += reads * page_size
        self.bytes_written += writes * page_size
        self.interval_ops += reads + writes
        t = (reads + writes) * self.op_time
        self.busy_time += t
        return t

    # ── placement ────────────────────────────────────────────

    def has_room(self, n: int = 1) -> bool:
        return len(self.segments) + n <= self.capacity_segments

    def place(self, segment_id: int) -> None:
        if segment_id in self.segments:
            return
        if not self.has_room():
            raise StorageFullError(f"disk {self.node_id}.{self.disk_id} has no free segment slot")
        self.segments.add(segment_id)

    def remove(self, segment_id: int) -> None:
        self.segments.discard(segment_id)

    def take_interval_ops(self) -> int:
        ops, self.interval_ops = self.interval_ops, 0
        return ops


def least_loaded(disks: list[SimDisk]) -> SimDisk:
    """Disk with free space and the fewest segments (lowest id on ties)."""
    candidates = [d for d in disks if d.has_room()]
    if not candidates:
        raise StorageFullError("no disk with a free segment slot")
    return min(candidates, key=lambda d: (len(d.segments), d.disk_id))


def plan_local_rebalance(
    iops: dict[int, float],
    segment_ops: dict[int, dict[int, int]],
    iops_cap: float,
    band: tuple[float, float],
) -> list[tuple[int, int, int]]:
    """Moves (segment_id, from_disk, to_disk) that pull disks back into the IOPS band.

    `iops` maps disk_id to observed ops/s; `segment_ops` maps disk_id to
    per-segment op counts for the last interval. The hottest segment of
    each disk above the band goes to the coolest disk below it.
    """
    low, high = band[0] * iops_cap, band[1] * iops_cap
    hot = sorted((d for d, v in iops.items() if v > high), key=lambda d: -iops[d])
    cold = sorted((d for d, v in iops.items() if v < low), key=lambda d: iops[d])
    moves = []
    for src, dst in zip(hot, cold):
        per_segment = segment_ops.get(src, {})
        if not per_segment:
            continue
        seg = max(sorted(per_segment), key=lambda s: per_segment[s])
        moves.append((seg, src, dst))
        logger.info(f"Local rebalance: segment {seg} disk {src} -> {dst}")
    return moves
