# elasticdb/storage/segment.py
"""
Segments: the fixed-size unit of physical distribution.

A segment owns `pages_per_segment` page slots of fixed-length records and
its own primary-key index (key -> (slot, offset)). Moving a segment to
another node or partition carries that index along untouched, which is
what lets physiological moves skip index rebuilding.

Design decisions:
  - Each record position holds the whole version chain of its key, so
    versions of one key always live on one page.
  - On overflow a segment splits at the median indexed key.
  - Freed positions (after GC drops a key) are reused before new ones.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from typing import Iterator

from elasticdb.core.errors import RoutingError, StorageFullError
from elasticdb.core.model import KeyRange, PageId, RecordVersion, TableSpec

_INDEX_ENTRY = struct.Struct("<QHH")


@dataclass
class Page:
    slot: int
    entries: list[list[RecordVersion] | None] = field(default_factory=list)


class Segment:
    def __init__(
        self,
        segment_id: int,
        table: TableSpec,
        key_range: KeyRange,
        home: tuple[int, int],
        pages_per_segment: int,
        page_size: int,
    ):
        self.segment_id = segment_id
        self.table = table
        self.key_range = key_range
        self.home = home
        self.pages_per_segment = pages_per_segment
        self.page_size = page_size
        self.records_per_page = max(1, page_size // table.record_size)
        self.pages = [Page(slot, [None] * self.records_per_page) for slot in range(pages_per_segment)]
        self._keys: list[int] = []
        self._index: dict[int, tuple[int, int]] = {}
        self._free: list[tuple[int, int]] = []
        self._next = 0

    # ── index ────────────────────────────────────────────────

    @property
    def capacity(self) -> int:
        return self.records_per_page * self.pages_per_segment

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: int) -> bool:
        return key in self._index

    @property
    def is_full(self) -> bool:
        return not self._free and self._next >= self.capacity

    def locate(self, key: int) -> tuple[int, int] | None:
        return self._index.get(key)

    def page_of(self, key: int) -> PageId | None:
        loc = self._index.get(key)
        return None if loc is None else PageId(self.segment_id, loc[0])

    def chain(self, key: int) -> list[RecordVersion] | None:
        loc = self._index.get(key)
        if loc is None:
            return None
        return self.pages[loc[0]].entries[loc[1]]

    def keys(self, key_range: KeyRange | None = None) -> list[int]:
        if key_range is None:
            return list(self._keys)
        lo = bisect.bisect_left(self._keys, key_range.low)
        hi = bisect.bisect_left(self._keys, key_range.high)
        return self._keys[lo:hi]

    def items(self) -> Iterator[tuple[int, list[RecordVersion]]]:
        for key in self._keys:
            slot, offset = self._index[key]
            yield key, self.pages[slot].entries[offset]

    def page_ids(self, keys: list[int] | None = None) -> list[PageId]:
        """Distinct pages holding `keys` (all used pages if None), in slot order."""
        if keys is None:
            slots = {slot for slot, _ in self._index.values()}
        else:
            slots = {self._index[k][0] for k in keys if k in self._index}
        return [PageId(self.segment_id, s) for s in sorted(slots)]

    def serialize_index(self) -> bytes:
        return b"".join(_INDEX_ENTRY.pack(k, *self._index[k]) for k in self._keys)

    # ── placement ────────────────────────────────────────────

    def add(self, key: int, chain: list[RecordVersion]) -> PageId:
        if key not in self.key_range:
            raise RoutingError(f"key {key} outside segment {self.segment_id} {self.key_range}")
        if key in self._index:
            raise ValueError(f"key {key} already indexed in segment {self.segment_id}")
        if self._free:
            slot, offset = self._free.pop()
        elif self._next < self.capacity:
            slot, offset = divmod(self._next, self.records_per_page)
            self._next += 1
        else:
            raise StorageFullError(f"segment {self.segment_id} is full")
        self.pages[slot].entries[offset] = chain
        self._index[key] = (slot, offset)
        bisect.insort(self._keys, key)
        return PageId(self.segment_id, slot)

    def drop(self, key: int) -> None:
        slot, offset = self._index.pop(key)
        self.pages[slot].entries[offset] = None
        self._free.append((slot, offset))
        del self._keys[bisect.bisect_left(self._keys, key)]

    def median_key(self) -> int:
        return self._keys[len(self._keys) // 2]

    def split_at(self, at_key: int, new_segment_id: int) -> "Segment":
        """Move keys >= at_key into a new segment; this one keeps the lower sub-range."""
        left_range, right_range = self.key_range.split(at_key)
        right = Segment(new_segment_id, self.table, right_range, self.home,
                        self.pages_per_segment, self.page_size)
        for key in self.keys(right_range):
            chain = self.chain(key)
            self.drop(key)
            right.add(key, chain)
        self.key_range = left_range
        return right

    def extend_range(self, key_range: KeyRange) -> None:
        """Grow the sub-range to an adjacent interval (used when absorbing neighbours)."""
        low = min(self.key_range.low, key_range.low)
        high = max(self.key_range.high, key_range.high)
        self.key_range = KeyRange(low, high)

    def clone(self) -> "Segment":
        """Deep copy with identical page layout, used for segment copies."""
        copy = Segment(self.segment_id, self.table, self.key_range, self.home,
                       self.pages_per_segment, self.page_size)
        for slot, page in enumerate(self.pages):
            copy.pages[slot].entries = [
                None if chain is None else [v.copy() for v in chain] for chain in page.entries
            ]
        copy._keys = list(self._keys)
        copy._index = dict(self._index)
        copy._free = list(self._free)
        copy._next = self._next
        return copy

    # ── accounting ───────────────────────────────────────────

    def live_bytes(self) -> int:
        return sum(v.size for _, chain in self.items() for v in chain)

    def payload_bytes(self) -> int:
        """Bytes of the newest committed, non-deleted version per key."""
        total = 0
        for _, chain in self.items():
            newest = next((v for v in reversed(chain) if v.committed), None)
            if newest is not None and not newest.deleted:
                total += newest.size
        return total

    def live_record_count(self) -> int:
        count = 0
        for _, chain in self.items():
            newest = next((v for v in reversed(chain) if v.committed), None)
            if newest is not None and not newest.deleted:
                count += 1
        return count

    def __repr__(self) -> str:
        return f"Segment({self.segment_id}, {self.key_range}, home={self.home}, n={len(self)})"
