# elasticdb/coordinator/router.py
"""
Partition map on the master: decides WHICH node(s) a request visits.

Strategy (intentionally simple):
  1. One sorted list of range entries per table, disjoint and covering.
  2. A Stable entry routes to its current owner.
  3. A Moving entry holds a dual pointer and routes to the new owner
     first, then the old one.

Entries are carved at move boundaries when a move starts and merged back
with equal neighbours when it completes, so the map stays small.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from enum import Enum

from elasticdb.core.errors import CorruptionError, RoutingError
from elasticdb.core.model import KeyRange, check_coverage

logger = logging.getLogger("elasticdb.coordinator.router")


class EntryState(str, Enum):
    STABLE = "stable"
    MOVING = "moving"


@dataclass
class PartitionMapEntry:
    table_id: int
    key_range: KeyRange
    current: int
    old: int | None = None
    state: EntryState = EntryState.STABLE

    def nodes(self) -> list[int]:
        if self.state is EntryState.MOVING and self.old is not None:
            return [self.current, self.old]
        return [self.current]


class PartitionMap:
    def __init__(self):
        self._entries: dict[int, list[PartitionMapEntry]] = {}
        self._key_max: dict[int, int] = {}

    # ── setup ────────────────────────────────────────────────

    def register_table(self, table_id: int, key_max: int) -> None:
        self._entries.setdefault(table_id, [])
        self._key_max[table_id] = key_max

    def assign(self, table_id: int, key_range: KeyRange, node_id: int) -> None:
        """Record a stable owner for a range that is not mapped yet (initial layout)."""
        entries = self._entries.setdefault(table_id, [])
        lows = [e.key_range.low for e in entries]
        entries.insert(bisect.bisect_left(lows, key_range.low), PartitionMapEntry(table_id, key_range, node_id))

    def entries(self, table_id: int) -> list[PartitionMapEntry]:
        return list(self._entries.get(table_id, []))

    def tables(self) -> list[int]:
        return sorted(self._entries)

    # ── lookups ──────────────────────────────────────────────

    def lookup(self, table_id: int, key: int) -> PartitionMapEntry:
        entries = self._entries.get(table_id)
        if not entries:
            raise RoutingError(f"table {table_id} has no partition map")
        i = bisect.bisect_right([e.key_range.low for e in entries], key) - 1
        if i < 0 or key not in entries[i].key_range:
            raise CorruptionError(f"partition map of table {table_id} does not cover key {key}")
        return entries[i]

    def overlapping(self, table_id: int, key_range: KeyRange) -> list[PartitionMapEntry]:
        return [e for e in self._entries.get(table_id, []) if e.key_range.intersects(key_range)]

    def nodes_of(self, table_id: int | None = None) -> set[int]:
        tables = self._entries if table_id is None else {table_id: self._entries.get(table_id, [])}
        return {n for entries in tables.values() for e in entries for n in e.nodes()}

    # ── moves ────────────────────────────────────────────────

    def _carve(self, table_id: int, key_range: KeyRange) -> list[PartitionMapEntry]:
        """Split entries so `key_range` is exactly a union of entries; return those."""
        entries = self._entries[table_id]
        out: list[PartitionMapEntry] = []
        for e in entries:
            cut = e.key_range.intersection(key_range)
            if cut is None:
                out.append(e)
                continue
            for low, high in ((e.key_range.low, cut.low), (cut.low, cut.high), (cut.high, e.key_range.high)):
                if low < high:
                    out.append(PartitionMapEntry(table_id, KeyRange(low, high), e.current, e.old, e.state))
        self._entries[table_id] = out
        return [e for e in out if key_range.covers(e.key_range)]

    def mark_moving(self, table_id: int, key_range: KeyRange, target: int, source: int) -> None:
        """Dual pointer: new owner first, old owner kept until the move completes."""
        for e in self._carve(table_id, key_range):
            e.current, e.old, e.state = target, source, EntryState.MOVING
        logger.debug(f"Map table {table_id}: {key_range} moving {source} -> {target}")

    def complete_move(self, table_id: int, key_range: KeyRange) -> None:
        """Delete the old pointer for every entry inside `key_range`."""
        for e in self._carve(table_id, key_range):
            e.old, e.state = None, EntryState.STABLE
        self._merge(table_id)

    def abort_move(self, table_id: int, key_range: KeyRange) -> None:
        """Roll a Moving entry back to its old owner."""
        for e in self._carve(table_id, key_range):
            if e.state is EntryState.MOVING and e.old is not None:
                e.current, e.old, e.state = e.old, None, EntryState.STABLE
        self._merge(table_id)

    def _merge(self, table_id: int) -> None:
        merged: list[PartitionMapEntry] = []
        for e in self._entries[table_id]:
            prev = merged[-1] if merged else None
            if (prev is not None and prev.key_range.high == e.key_range.low and prev.state is e.state
                    and prev.current == e.current and prev.old == e.old):
                prev.key_range = KeyRange(prev.key_range.low, e.key_range.high)
            else:
                merged.append(e)
        self._entries[table_id] = merged

    # ── invariants / debug ───────────────────────────────────

    def check(self) -> str | None:
        """First coverage/disjointness or pointer-state violation, None if sound."""
        for table_id, entries in self._entries.items():
            problem = check_coverage([e.key_range for e in entries], self._key_max.get(table_id, 0))
            if problem:
                return f"table {table_id}: {problem}"
            for e in entries:
                if (e.old is None) != (e.state is EntryState.STABLE):
                    return f"table {table_id}: entry {e.key_range} has old={e.old} in state {e.state.value}"
        return None

    def dump(self) -> str:
        lines = []
        for table_id in sorted(self._entries):
            for e in self._entries[table_id]:
                old = "" if e.old is None else f" old={e.old}"
                lines.append(f"table {table_id} {e.key_range} -> {e.current}{old} {e.state.value}")
        return "\n".join(lines)


def route(pmap: PartitionMap, table_id: int, key: int) -> list[int]:
    """Nodes to visit for a key, in order: [current] or [current, old]."""
    return pmap.lookup(table_id, key).nodes()


def route_range(pmap: PartitionMap, table_id: int, key_range: KeyRange) -> list[tuple[KeyRange, list[int]]]:
    """Split a scan range into per-entry pieces with their visiting order."""
    out = []
    for e in pmap.overlapping(table_id, key_range):
        out.append((e.key_range.intersection(key_range), e.nodes()))
    if not out:
        raise RoutingError(f"table {table_id}: nothing mapped for {key_range}")
    return out
