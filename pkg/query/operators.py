# elasticdb/query/operators.py
"""
Volcano-style query operators with vectorized next() calls.

What it does:
  - Every operator runs on one node (its placement) and charges the CPU
    it needs on that node's core pool.
  - `next_vector(ctx)` is a simpy sub-generator returning a list of rows
    (at most ctx.batch_size) or None once the operator is exhausted.
    Classic mode is vectorized mode with a batch size of one.
  - Exchange is the node boundary: each call is one request/reply round
    trip with the rows serialized on the producer side.
  - Buffer prefetches through its child from a concurrent process and
    hands batches over a bounded simpy.Store.

Rows are (key, payload) tuples out of scans; Project and GroupAggregate
may reshape them.

Design decisions:
  - Sort and GroupAggregate are blocking: they drain their child on the
    first call. Sort charges n*log2(n) sort units and spills to disk
    above sort_memory_records.
  - Scan fixes its rows at open time (one consistent instant per node)
    and pays per-record CPU and page reads as the vectors are pulled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable

import simpy

from elasticdb.cluster.messages import CONTROL_BYTES, Reply
from elasticdb.cluster.monitor import Breakdown
from elasticdb.concurrency.txn import Transaction
from elasticdb.core.model import KeyRange

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master

logger = logging.getLogger("elasticdb.query.operators")

Row = tuple


class OperatorKind(str, Enum):
    SCAN = "Scan"
    PROJECT = "Project"
    FILTER = "Filter"
    UNION = "Union"
    SORT = "Sort"
    GROUP_AGGREGATE = "GroupAggregate"
    BUFFER = "Buffer"
    EXCHANGE = "Exchange"

    @property
    def blocking(self) -> bool:
        return self in (OperatorKind.SORT, OperatorKind.GROUP_AGGREGATE)


@dataclass
class ExecContext:
    cluster: "Cluster"
    txn: Transaction
    master: "Master | None" = None
    vectorized: bool = True
    vector_size: int = 1024
    bd: Breakdown = field(default_factory=Breakdown)
    round_trips: int = 0
    bytes_shipped: int = 0

    @property
    def env(self) -> simpy.Environment:
        return self.cluster.env

    @property
    def batch_size(self) -> int:
        return self.vector_size if self.vectorized else 1


class Operator:
    kind: OperatorKind

    def __init__(self, node_id: int, children: list["Operator"] | None = None):
        self.node_id = node_id
        self.children = children or []

    @property
    def child(self) -> "Operator":
        return self.children[0]

    def open(self, ctx: ExecContext):
        for c in self.children:
            yield from c.open(ctx)

    def next_vector(self, ctx: ExecContext):
        raise NotImplementedError

    def close(self, ctx: ExecContext) -> None:
        for c in self.children:
            c.close(ctx)

    def work(self, ctx: ExecContext, seconds: float):
        if seconds > 0:
            yield from ctx.cluster.node(self.node_id).work(seconds, bd=ctx.bd)

    def label(self) -> str:
        return f"{self.kind.value} [node {self.node_id}]"

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


# ── data access ──────────────────────────────────────────────

class Scan(Operator):
    kind = OperatorKind.SCAN

    def __init__(self, node_id: int, table_id: int, key_range: KeyRange):
        super().__init__(node_id)
        self.table_id = table_id
        self.key_range = key_range
        self._rows: list[Row] = []
        self._pages: list = []
        self._pos = 0
        self._paid_pages = 0

    def open(self, ctx: ExecContext):
        node = ctx.cluster.node(self.node_id)
        ctx.txn.participants.add(self.node_id)
        rows, unserved, pages, _ = yield from node.collect_range(ctx.txn, self.table_id, self.key_range, ctx.bd)
        yield from self.work(ctx, ctx.cluster.cfg.cpu_per_op)
        missing = [u for u in unserved if u.reply in (Reply.NOT_HERE, Reply.REDIRECT)]
        if missing:
            if ctx.master is None:
                raise RuntimeError(f"scan on node {self.node_id} left {len(missing)} ranges unserved")
            # The range moved away since planning; read those pieces through the master.
            for piece in missing:
                rows.extend((yield from ctx.master.scan(ctx.txn, self.table_id, piece.key_range, ctx.bd)))
            rows.sort()
        self._rows, self._pages, self._pos, self._paid_pages = rows, pages, 0, 0

    def next_vector(self, ctx: ExecContext):
        if self._pos >= len(self._rows):
            return None
        batch = self._rows[self._pos:self._pos + ctx.batch_size]
        self._pos += len(batch)
        node = ctx.cluster.node(self.node_id)
        due = math.ceil(len(self._pages) * self._pos / len(self._rows))
        for page, home, part in self._pages[self._paid_pages:due]:
            yield from node.read_page(page, home, False, part, ctx.bd)
        self._paid_pages = due
        yield from self.work(ctx, len(batch) * ctx.cluster.cfg.cpu_per_record_scan)
        return batch

    def label(self) -> str:
        return f"Scan table={self.table_id} {self.key_range} [node {self.node_id}]"


# ── pipelining ───────────────────────────────────────────────

def payload_prefix(width: int) -> Callable[[Row], Row]:
    def project(row: Row) -> Row:
        return (row[0], row[1][:width])
    return project


class Project(Operator):
    kind = OperatorKind.PROJECT

    def __init__(self, node_id: int, child: Operator, fn: Callable[[Row], Row] | None = None):
        super().__init__(node_id, [child])
        self.fn = fn or (lambda row: row)

    def next_vector(self, ctx: ExecContext):
        batch = yield from self.child.next_vector(ctx)
        if batch is None:
            return None
        yield from self.work(ctx, len(batch) * ctx.cluster.cfg.cpu_per_record_project)
        return [self.fn(row) for row in batch]


class Filter(Operator):
    """Primary-key range predicate; the planner pushes it into the scans below."""
    kind = OperatorKind.FILTER

    def __init__(self, node_id: int, child: Operator, key_range: KeyRange):
        super().__init__(node_id, [child])
        self.key_range = key_range

    def next_vector(self, ctx: ExecContext):
        while True:
            batch = yield from self.child.next_vector(ctx)
            if batch is None:
                return None
            yield from self.work(ctx, len(batch) * ctx.cluster.cfg.cpu_per_record_project)
            kept = [row for row in batch if row[0] in self.key_range]
            if kept:
                return kept

    def label(self) -> str:
        return f"Filter {self.key_range} [node {self.node_id}]"


class Union(Operator):
    """Concatenates its inputs in order (range scans of adjacent partitions)."""
    kind = OperatorKind.UNION

    def __init__(self, node_id: int, children: list[Operator]):
        super().__init__(node_id, children)
        self._current = 0

    def next_vector(self, ctx: ExecContext):
        while self._current < len(self.children):
            batch = yield from self.children[self._current].next_vector(ctx)
            if batch is not None:
                return batch
            self._current += 1
        return None


# ── blocking ─────────────────────────────────────────────────

class _Blocking(Operator):
    def __init__(self, node_id: int, child: Operator):
        super().__init__(node_id, [child])
        self._out: list[Row] | None = None
        self._pos = 0

    def _drain(self, ctx: ExecContext):
        rows: list[Row] = []
        while True:
            batch = yield from self.child.next_vector(ctx)
            if batch is None:
                return rows
            rows.extend(batch)

    def _produce(self, ctx: ExecContext, rows: list[Row]):
        raise NotImplementedError

    def next_vector(self, ctx: ExecContext):
        if self._out is None:
            rows = yield from self._drain(ctx)
            self._out = yield from self._produce(ctx, rows)
        if self._pos >= len(self._out):
            return None
        batch = self._out[self._pos:self._pos + ctx.batch_size]
        self._pos += len(batch)
        return batch


def sort_cost(n: int, unit: float) -> float:
    return n * math.log2(n) * unit if n > 1 else 0.0


class Sort(_Blocking):
    kind = OperatorKind.SORT

    def __init__(self, node_id: int, child: Operator, key: Callable[[Row], Any] | None = None,
                 reverse: bool = False):
        super().__init__(node_id, child)
        self.key = key or (lambda row: row[1])
        self.reverse = reverse

    def _produce(self, ctx: ExecContext, rows: list[Row]):
        cfg = ctx.cluster.cfg
        n = len(rows)
        yield from self.work(ctx, sort_cost(n, cfg.cpu_per_sort_unit))
        if n > cfg.sort_memory_records:
            pages = math.ceil(n * cfg.record_size / cfg.page_size)
            node = ctx.cluster.node(self.node_id)
            yield from node.disk_io(0, writes=pages, bd=ctx.bd)
            yield from node.disk_io(0, reads=pages, bd=ctx.bd)
        return sorted(rows, key=self.key, reverse=self.reverse)


def payload_int(row: Row) -> int:
    """First 8 payload bytes as a little-endian integer (the benchmark's value column)."""
    return int.from_bytes(row[1][:8], "little")


_AGGREGATES: dict[str, Callable[[list[float]], float]] = {
    "count": len,
    "sum": sum,
    "min": min,
    "max": max,
    "avg": lambda values: sum(values) / len(values),
}


class GroupAggregate(_Blocking):
    kind = OperatorKind.GROUP_AGGREGATE

    def __init__(self, node_id: int, child: Operator, agg: str = "sum",
                 group: Callable[[Row], Any] | None = None, value: Callable[[Row], float] = payload_int):
        super().__init__(node_id, child)
        if agg not in _AGGREGATES:
            raise ValueError(f"Unsupported aggregate: {agg}")
        self.agg = agg
        self.group = group or (lambda row: 0)
        self.value = value

    def _produce(self, ctx: ExecContext, rows: list[Row]):
        cfg = ctx.cluster.cfg
        yield from self.work(ctx, len(rows) * cfg.cpu_per_record_project
                             + sort_cost(len(rows), cfg.cpu_per_sort_unit))
        groups: dict[Any, list[float]] = {}
        for row in rows:
            groups.setdefault(self.group(row), []).append(self.value(row))
        fold = _AGGREGATES[self.agg]
        return [(g, fold(values)) for g, values in sorted(groups.items())]

    def label(self) -> str:
        return f"GroupAggregate {self.agg} [node {self.node_id}]"


# ── node boundary ────────────────────────────────────────────

class Exchange(Operator):
    """Pulls the child's vectors across the network to `node_id`."""
    kind = OperatorKind.EXCHANGE

    def next_vector(self, ctx: ExecContext):
        cluster, cfg = ctx.cluster, ctx.cluster.cfg
        producer = self.child.node_id
        consumer = cluster.node(self.node_id)
        yield from cluster.transmit(self.node_id, producer, CONTROL_BYTES, ctx.bd)
        yield from cluster.node(producer).work(consumer.message_cpu(CONTROL_BYTES), bd=ctx.bd)
        batch = yield from self.child.next_vector(ctx)
        n = len(batch) if batch else 0
        if n:
            yield from cluster.node(producer).work(n * cfg.cpu_per_record_serialize, bd=ctx.bd)
        size = CONTROL_BYTES + n * cfg.record_size
        yield from cluster.transmit(producer, self.node_id, size, ctx.bd)
        yield from consumer.work(consumer.message_cpu(size), bd=ctx.bd)
        ctx.round_trips += 1
        ctx.bytes_shipped += size
        return batch

    def label(self) -> str:
        return f"Exchange [node {self.child.node_id} -> {self.node_id}]"


_DONE = object()


class Buffer(Operator):
    """Prefetches the next vectors from its child while the consumer works."""
    kind = OperatorKind.BUFFER

    def __init__(self, node_id: int, child: Operator, depth: int = 1):
        super().__init__(node_id, [child])
        self.depth = depth
        self._store: simpy.Store | None = None
        self._proc = None
        self._prefetching = False

    def open(self, ctx: ExecContext):
        yield from super().open(ctx)
        self._store = simpy.Store(ctx.env, capacity=self.depth)
        self._proc = ctx.env.process(self._prefetch(ctx))

    def _prefetch(self, ctx: ExecContext):
        self._prefetching = True
        try:
            while True:
                batch = yield from self.child.next_vector(ctx)
                yield self._store.put(_DONE if batch is None else batch)
                if batch is None:
                    return
        except simpy.Interrupt:
            return
        except Exception as e:
            self._prefetching = False
            yield self._store.put(e)
        finally:
            self._prefetching = False

    def next_vector(self, ctx: ExecContext):
        item = yield self._store.get()
        if isinstance(item, Exception):
            raise item
        if item is _DONE:
            self._store.put(_DONE)
            return None
        return item

    def close(self, ctx: ExecContext) -> None:
        """Stop prefetching so an abandoned producer does no further work."""
        if self._proc is not None and self._proc.is_alive and self._prefetching:
            self._proc.interrupt("closed")
        super().close(ctx)
