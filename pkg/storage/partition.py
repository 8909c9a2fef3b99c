# elasticdb/storage/partition.py
"""
Partitions: a node-owned key range of one table with a small top index.

The top index holds one entry per member segment (sorted by sub-range
low key). A key routes to the unique segment whose sub-range covers it
(inclusive low, exclusive high). Segments may live on another node's
disk (physical scheme); the partition does not care, cost accounting
does.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator

from elasticdb.core.errors import CorruptionError, RoutingError, SplitRefused, StorageFullError
from elasticdb.core.model import KeyRange, PageId, RecordVersion, TableSpec
from elasticdb.storage.segment import Segment

logger = logging.getLogger("elasticdb.storage.partition")


class PartitionState(str, Enum):
    STABLE = "stable"
    MOVING_OUT = "moving_out"
    FORWARDING = "forwarding"
    MOVING_IN = "moving_in"


@dataclass
class PartitionCounters:
    cpu_cycles: float = 0.0
    page_requests: int = 0
    net_io: int = 0

    def reset(self) -> "PartitionCounters":
        snapshot = PartitionCounters(self.cpu_cycles, self.page_requests, self.net_io)
        self.cpu_cycles, self.page_requests, self.net_io = 0.0, 0, 0
        return snapshot


class Partition:
    def __init__(
        self,
        partition_id: int,
        table: TableSpec,
        owner: int,
        key_range: KeyRange,
        new_segment_id: Callable[[], int],
        pages_per_segment: int,
        page_size: int,
        home: tuple[int, int] | None = None,
        segments: Iterable[Segment] | None = None,
    ):
        self.partition_id = partition_id
        self.table = table
        self.owner = owner
        self.key_range = key_range
        self.state = PartitionState.STABLE
        self.peer: int | None = None
        self.counters = PartitionCounters()
        self._new_segment_id = new_segment_id
        self._pages_per_segment = pages_per_segment
        self._page_size = page_size
        self._segments: list[Segment] = []
        self._lows: list[int] = []
        if segments is not None:
            for seg in segments:
                self.attach_segment(seg)
        else:
            self.attach_segment(Segment(new_segment_id(), table, key_range, home or (owner, 0),
                                        pages_per_segment, page_size))

    # ── top index ────────────────────────────────────────────

    @property
    def segments(self) -> list[Segment]:
        return list(self._segments)

    def attach_segment(self, segment: Segment) -> None:
        i = bisect.bisect_left(self._lows, segment.key_range.low)
        self._lows.insert(i, segment.key_range.low)
        self._segments.insert(i, segment)

    def detach_segment(self, segment: Segment) -> None:
        i = self._segments.index(segment)
        del self._segments[i]
        del self._lows[i]

    def route_in_partition(self, key: int) -> Segment:
        if key not in self.key_range:
            raise RoutingError(f"key {key} outside partition {self.partition_id} {self.key_range}")
        i = bisect.bisect_right(self._lows, key) - 1
        if i < 0 or key not in self._segments[i].key_range:
            raise CorruptionError(f"top index of partition {self.partition_id} has a gap at {key}")
        return self._segments[i]

    def locate_segment(self, key: int) -> Segment | None:
        """Segment whose sub-range covers key, ignoring the partition range."""
        i = bisect.bisect_right(self._lows, key) - 1
        if i < 0 or key not in self._segments[i].key_range:
            return None
        return self._segments[i]

    def segments_for(self, key_range: KeyRange) -> list[Segment]:
        """Segments whose sub-ranges intersect `key_range` (segment pruning)."""
        return [s for s in self._segments if s.key_range.intersects(key_range)]

    def check_top_index(self) -> str | None:
        expected = self.key_range.low
        for seg in self._segments:
            if seg.key_range.low != expected:
                return f"partition {self.partition_id}: sub-range gap/overlap at {seg.key_range.low}"
            expected = seg.key_range.high
        if expected != self.key_range.high:
            return f"partition {self.partition_id}: top index ends at {expected}"
        return None

    # ── records ──────────────────────────────────────────────

    def segment_lookup(self, key: int) -> list[RecordVersion] | None:
        return self.route_in_partition(key).chain(key)

    def page_of(self, key: int) -> PageId:
        seg = self.route_in_partition(key)
        return seg.page_of(key) or PageId(seg.segment_id, 0)

    def insert_record(self, key: int, version: RecordVersion) -> PageId:
        """Place a version; new keys get a position, existing chains grow."""
        seg = self.route_in_partition(key)
        chain = seg.chain(key)
        if chain is not None:
            chain.append(version)
            return seg.page_of(key)
        if seg.is_full:
            seg = self._split_full(seg, key)
        return seg.add(key, [version])

    def _split_full(self, seg: Segment, key: int) -> Segment:
        median = seg.median_key()
        if median == seg.key_range.low:
            raise StorageFullError(f"segment {seg.segment_id} full and cannot split")
        right = seg.split_at(median, self._new_segment_id())
        self.attach_segment(right)
        logger.debug(f"Partition {self.partition_id}: split segment {seg.segment_id} at {median}")
        return right if key >= median else seg

    def drop_record(self, key: int) -> None:
        self.route_in_partition(key).drop(key)

    def split_segment_at(self, key: int) -> None:
        """Make `key` a segment boundary (no-op if it already is one)."""
        if key == self.key_range.low or key == self.key_range.high:
            return
        seg = self.route_in_partition(key)
        if seg.key_range.low == key:
            return
        self.attach_segment(seg.split_at(key, self._new_segment_id()))

    def bulk_load(self, versions: Iterable[RecordVersion]) -> None:
        """Append ascending keys, filling segments completely before cutting a new one."""
        for v in versions:
            key = v.key.primary_key
            seg = self.route_in_partition(key)
            if seg.is_full:
                self.attach_segment(seg.split_at(key, self._new_segment_id()))
                seg = self.route_in_partition(key)
            seg.add(key, [v])

    def items(self, key_range: KeyRange | None = None) -> Iterator[tuple[Segment, int, list[RecordVersion]]]:
        segments = self._segments if key_range is None else self.segments_for(key_range)
        for seg in segments:
            for key in seg.keys(key_range):
                yield seg, key, seg.chain(key)

    # ── reshaping ────────────────────────────────────────────

    def split(self, at_key: int, new_partition_id: int, aligned: bool = False) -> "Partition":
        """Cut off [at_key, high) as a new partition on the same owner."""
        if not self.key_range.low < at_key < self.key_range.high:
            raise SplitRefused(f"split key {at_key} not strictly inside {self.key_range}")
        if aligned and at_key not in self._lows:
            raise SplitRefused(f"split key {at_key} is not a segment boundary")
        self.split_segment_at(at_key)
        left_range, right_range = self.key_range.split(at_key)
        moving = [s for s in self._segments if s.key_range.low >= at_key]
        for seg in moving:
            self.detach_segment(seg)
        self.key_range = left_range
        right = Partition(new_partition_id, self.table, self.owner, right_range, self._new_segment_id,
                          self._pages_per_segment, self._page_size, segments=moving)
        return right

    def shrink_to(self, key_range: KeyRange) -> None:
        self.key_range = key_range

    def extend_to(self, key_range: KeyRange) -> None:
        """Grow to cover an adjacent range; the edge segment absorbs the new keys."""
        grown = KeyRange(min(self.key_range.low, key_range.low), max(self.key_range.high, key_range.high))
        if self._segments:
            first, last = self._segments[0], self._segments[-1]
            if grown.low < first.key_range.low:
                first.extend_range(KeyRange(grown.low, first.key_range.high))
                self._lows[0] = grown.low
            if grown.high > last.key_range.high:
                last.extend_range(KeyRange(last.key_range.low, grown.high))
        self.key_range = grown

    def trim_segments(self) -> list[Segment]:
        """Detach segments left wholly outside the range and clip the edge ones.

        Keys outside the range must already be purged. Returns the detached
        segments so the caller can free their disk slots.
        """
        gone = [s for s in self._segments if not s.key_range.intersects(self.key_range)]
        for seg in gone:
            self.detach_segment(seg)
        for i, seg in enumerate(self._segments):
            clipped = seg.key_range.intersection(self.key_range)
            if clipped != seg.key_range:
                seg.key_range = clipped
                self._lows[i] = clipped.low
        return gone

    # ── accounting / debug ───────────────────────────────────

    def record_count(self) -> int:
        return sum(s.live_record_count() for s in self._segments)

    def live_bytes(self) -> int:
        return sum(s.live_bytes() for s in self._segments)

    def payload_bytes(self) -> int:
        return sum(s.payload_bytes() for s in self._segments)

    def dump(self) -> str:
        lines = [
            f"partition {self.partition_id} table={self.table.name} owner={self.owner} "
            f"state={self.state.value} range={self.key_range} segments={len(self._segments)} "
            f"live={self.record_count()}"
        ]
        for seg in self._segments:
            lines.append(
                f"  segment {seg.segment_id} range={seg.key_range} home={seg.home[0]}.{seg.home[1]} "
                f"keys={len(seg)} live={seg.live_record_count()}"
            )
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"Partition({self.partition_id}, {self.table.name}, owner={self.owner}, {self.key_range})"
