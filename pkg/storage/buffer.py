# elasticdb/storage/buffer.py
"""
LRU buffer pool with an optional remote extension on a helper node.

The pool only decides WHAT happens to a page request (hit, miss,
eviction, write-back, spill); the node turns the returned AccessCost
into disk and network time. Page homes are passed in by the caller
because the owner's page-address mapping (physical moves) lives there.

Eviction is least-recently-used. A dirty victim is always written back
to its home first; with a remote extension the (now clean) victim is
then spilled to the helper so a later re-read skips the disk.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

from elasticdb.core.model import PageId

logger = logging.getLogger("elasticdb.storage.buffer")


@dataclass
class Frame:
    home: tuple[int, int]
    dirty: bool = False


@dataclass
class AccessCost:
    hit: bool = False
    remote_hit: bool = False
    reads: list[tuple[int, int]] = field(default_factory=list)
    writes: list[tuple[int, int]] = field(default_factory=list)
    spills: int = 0


@dataclass
class RemoteExtension:
    helper: int
    capacity: int
    pages: OrderedDict = field(default_factory=OrderedDict)


class BufferPool:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.frames: OrderedDict[PageId, Frame] = OrderedDict()
        self.remote: RemoteExtension | None = None
        self.requests = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.write_backs = 0
        self.remote_hits = 0
        self.interval_requests = 0

    def __len__(self) -> int:
        return len(self.frames)

    def __contains__(self, page_id: PageId) -> bool:
        return page_id in self.frames

    # ── requests ─────────────────────────────────────────────

    def request(self, page_id: PageId, home: tuple[int, int], write: bool = False) -> AccessCost:
        self.requests += 1
        self.interval_requests += 1
        cost = AccessCost()
        frame = self.frames.get(page_id)
        if frame is not None:
            self.hits += 1
            cost.hit = True
            frame.home = home
            self.frames.move_to_end(page_id)
        else:
            self.misses += 1
            if self.remote is not None and self.remote.pages.pop(page_id, None) is not None:
                self.remote_hits += 1
                cost.remote_hit = True
            else:
                cost.reads.append(home)
            self._make_room(cost)
            frame = Frame(home)
            self.frames[page_id] = frame
        if write:
            frame.dirty = True
        return cost

    def _make_room(self, cost: AccessCost) -> None:
        while len(self.frames) >= self.capacity:
            victim, frame = self.frames.popitem(last=False)
            self.evictions += 1
            if frame.dirty:
                self.write_backs += 1
                cost.writes.append(frame.home)
            if self.remote is not None:
                self.remote.pages[victim] = True
                cost.spills += 1
                if len(self.remote.pages) > self.remote.capacity:
                    self.remote.pages.popitem(last=False)

    def flush_all(self) -> list[tuple[int, int]]:
        """Write back every dirty page; returns the homes written."""
        writes = []
        for frame in self.frames.values():
            if frame.dirty:
                frame.dirty = False
                self.write_backs += 1
                writes.append(frame.home)
        return writes

    def flush_segment(self, segment_id: int) -> list[tuple[int, int]]:
        """Write back a segment's dirty pages but keep them resident."""
        writes = []
        for page_id, frame in self.frames.items():
            if page_id.segment_id == segment_id and frame.dirty:
                frame.dirty = False
                self.write_backs += 1
                writes.append(frame.home)
        return writes

    def drop_segment(self, segment_id: int) -> list[tuple[int, int]]:
        """Forget a segment's pages (it left this node); dirty ones are written back."""
        writes = []
        for page_id in [p for p in self.frames if p.segment_id == segment_id]:
            frame = self.frames.pop(page_id)
            if frame.dirty:
                self.write_backs += 1
                writes.append(frame.home)
        if self.remote is not None:
            for page_id in [p for p in self.remote.pages if p.segment_id == segment_id]:
                del self.remote.pages[page_id]
        return writes

    def rehome_segment(self, segment_id: int, home: tuple[int, int]) -> None:
        for page_id, frame in self.frames.items():
            if page_id.segment_id == segment_id:
                frame.home = home

    # ── remote extension ─────────────────────────────────────

    def extend_remote(self, helper: int, pages: int) -> None:
        self.remote = RemoteExtension(helper, pages)
        logger.info(f"Buffer extended by {pages} pages on helper {helper}")

    def detach_remote(self) -> int:
        """Drop the remote extension; returns how many spilled pages were lost."""
        if self.remote is None:
            return 0
        lost = len(self.remote.pages)
        logger.info(f"Detached remote buffer on helper {self.remote.helper} ({lost} pages dropped)")
        self.remote = None
        return lost

    def take_interval_requests(self) -> int:
        n, self.interval_requests = self.interval_requests, 0
        return n
