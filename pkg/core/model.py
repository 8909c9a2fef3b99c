# elasticdb/core/model.py
"""
Shared domain vocabulary: keys, versions, key ranges, page ids and table
descriptors. Every other sub-package imports from here.

Design decisions:
  - Primary keys are unsigned 64-bit ints; composite keys are packed by
    field shifting (pack_key / unpack_key) so range math stays uniform.
  - Timestamps are logical commit counters. A version whose creator has
    not committed yet carries begin_ts = None.
  - PageId is the logical page address (segment, slot). The physical
    home (node, disk) lives on the segment, so a physical move changes
    one mapping instead of every cached page id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

OPEN_TS = 2**63 - 1
KEY_MAX = 2**64


@dataclass(frozen=True, order=True, slots=True)
class RecordKey:
    table_id: int
    primary_key: int


@dataclass(slots=True)
class RecordVersion:
    key: RecordKey
    payload: bytes
    begin_ts: int | None
    end_ts: int = OPEN_TS
    creator_txn: int = 0
    deleted: bool = False
    size: int = 0

    @property
    def committed(self) -> bool:
        return self.begin_ts is not None

    def copy(self) -> "RecordVersion":
        return RecordVersion(
            self.key, self.payload, self.begin_ts, self.end_ts,
            self.creator_txn, self.deleted, self.size,
        )


@dataclass(frozen=True, order=True, slots=True)
class KeyRange:
    """Half-open primary-key interval [low, high)."""

    low: int
    high: int

    def __post_init__(self):
        if not 0 <= self.low < self.high <= KEY_MAX:
            raise ValueError(f"invalid key range [{self.low}, {self.high})")

    def __contains__(self, key: int) -> bool:
        return self.low <= key < self.high

    def intersects(self, other: "KeyRange") -> bool:
        return self.low < other.high and other.low < self.high

    def covers(self, other: "KeyRange") -> bool:
        return self.low <= other.low and other.high <= self.high

    def intersection(self, other: "KeyRange") -> "KeyRange | None":
        low, high = max(self.low, other.low), min(self.high, other.high)
        return KeyRange(low, high) if low < high else None

    def split(self, at: int) -> tuple["KeyRange", "KeyRange"]:
        return KeyRange(self.low, at), KeyRange(at, self.high)

    def __str__(self) -> str:
        return f"[{self.low},{self.high})"


@dataclass(frozen=True, order=True, slots=True)
class PageId:
    segment_id: int
    slot: int


@dataclass(frozen=True, slots=True)
class TableSpec:
    table_id: int
    name: str
    record_size: int
    key_max: int
    key_widths: tuple[int, ...] = field(default=())


# ── composite keys ───────────────────────────────────────────

def pack_key(parts: Sequence[int], widths: Sequence[int]) -> int:
    """Pack fields high-to-low into one unsigned int."""
    if len(parts) != len(widths):
        raise ValueError("parts and widths differ in length")
    key = 0
    for value, width in zip(parts, widths):
        if not 0 <= value < (1 << width):
            raise ValueError(f"field value {value} does not fit in {width} bits")
        key = (key << width) | value
    return key


def unpack_key(key: int, widths: Sequence[int]) -> tuple[int, ...]:
    parts = []
    for width in reversed(widths):
        parts.append(key & ((1 << width) - 1))
        key >>= width
    return tuple(reversed(parts))


def subtract_ranges(pieces: Iterable[KeyRange], cut: KeyRange) -> list[KeyRange]:
    """Remove `cut` from every piece, keeping what is left in order."""
    out = []
    for p in pieces:
        if not p.intersects(cut):
            out.append(p)
            continue
        if p.low < cut.low:
            out.append(KeyRange(p.low, cut.low))
        if cut.high < p.high:
            out.append(KeyRange(cut.high, p.high))
    return out


# ── invariant checks ─────────────────────────────────────────

def check_coverage(ranges: Iterable[KeyRange], table_max: int) -> str | None:
    """First gap or overlap in `ranges` against [0, table_max), or None."""
    expected = 0
    for r in sorted(ranges):
        if r.low < expected:
            return f"overlap at {r.low}"
        if r.low > expected:
            return f"gap [{expected},{r.low})"
        expected = r.high
    if expected != table_max:
        return f"gap [{expected},{table_max})"
    return None


def check_version_chain(chain: Sequence[RecordVersion]) -> str | None:
    """Monotone begin_ts, end_ts linking successors, pending version last."""
    committed = [v for v in chain if v.committed]
    pending = [v for v in chain if not v.committed]
    if len(pending) > 1:
        return "more than one uncommitted version"
    if pending and chain[-1] is not pending[0]:
        return "uncommitted version is not the newest"
    for older, newer in zip(committed, committed[1:]):
        if not older.begin_ts < newer.begin_ts:
            return f"begin_ts not increasing at {newer.begin_ts}"
        if older.end_ts != newer.begin_ts:
            return f"end_ts {older.end_ts} does not meet successor begin_ts {newer.begin_ts}"
    if committed and committed[-1].end_ts != OPEN_TS:
        return "newest committed version is closed"
    return None
