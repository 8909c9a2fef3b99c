# elasticdb/bench/tpcc.py
"""
TPC-C-lite: schema, deterministic data generation and the five
transaction procedures.

What it does:
  - Seven fixed-width tables keyed by packed composite keys. Row counts
    are fixed functions of the warehouse count W, with the per-district
    and item counts divided by a desk divisor.
  - `load()` range-splits every table into k partitions at key quantiles
    and spreads them round-robin over the starting nodes.
  - Procedures are single-shot transaction bodies (no user interaction).
    Parameters are drawn before the first attempt so retries repeat the
    same request.

Payloads are 8-byte little-endian counters; the stored record size is
the table's row width.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Iterator

import numpy as np

from elasticdb.core.model import KeyRange, RecordKey, RecordVersion, TableSpec, pack_key
from elasticdb.storage.partition import Partition

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master, TxnContext

logger = logging.getLogger("elasticdb.bench.tpcc")

WAREHOUSE, DISTRICT, CUSTOMER, ORDERS, ORDER_LINE, STOCK, ITEM = range(1, 8)

DISTRICTS_PER_WAREHOUSE = 10
CUSTOMERS_PER_DISTRICT = 3000
ITEMS = 100_000
ORDER_LINES_PER_ORDER = 5

_W, _D, _C, _O, _OL, _I = 16, 8, 16, 24, 8, 20

SCHEMA: dict[str, TableSpec] = {
    spec.name: spec
    for spec in (
        TableSpec(WAREHOUSE, "warehouse", 89, 1 << _W, (_W,)),
        TableSpec(DISTRICT, "district", 95, 1 << (_W + _D), (_W, _D)),
        TableSpec(CUSTOMER, "customer", 655, 1 << (_W + _D + _C), (_W, _D, _C)),
        TableSpec(ORDERS, "orders", 24, 1 << (_W + _D + _O), (_W, _D, _O)),
        TableSpec(ORDER_LINE, "order_line", 54, 1 << (_W + _D + _O + _OL), (_W, _D, _O, _OL)),
        TableSpec(STOCK, "stock", 306, 1 << (_W + _I), (_W, _I)),
        TableSpec(ITEM, "item", 82, 1 << _I, (_I,)),
    )
}


def encode(value: int) -> bytes:
    return int(value).to_bytes(8, "little")


def decode(payload: bytes | None) -> int:
    return int.from_bytes(payload[:8], "little") if payload else 0


# ── keys ─────────────────────────────────────────────────────

def warehouse_key(w: int) -> int:
    return pack_key((w,), (_W,))


def district_key(w: int, d: int) -> int:
    return pack_key((w, d), (_W, _D))


def customer_key(w: int, d: int, c: int) -> int:
    return pack_key((w, d, c), (_W, _D, _C))


def order_key(w: int, d: int, o: int) -> int:
    return pack_key((w, d, o), (_W, _D, _O))


def order_line_key(w: int, d: int, o: int, ol: int) -> int:
    return pack_key((w, d, o, ol), (_W, _D, _O, _OL))


def stock_key(w: int, i: int) -> int:
    return pack_key((w, i), (_W, _I))


def item_key(i: int) -> int:
    return pack_key((i,), (_I,))


@dataclass(frozen=True)
class Params:
    w: int
    d: int
    c: int
    o: int
    items: tuple[int, ...]


class TpccLite:
    def __init__(self, warehouses: int = 4, divisor: int = 10, seed: int = 42):
        if warehouses < 1 or divisor < 1:
            raise ValueError(f"warehouses and divisor must be positive (got {warehouses}, {divisor})")
        self.warehouses = warehouses
        self.divisor = divisor
        self.seed = seed
        self.customers = max(1, CUSTOMERS_PER_DISTRICT // divisor)
        self.items = max(1, ITEMS // divisor)
        self.orders = self.customers
        self.tables = SCHEMA

    # ── generation ───────────────────────────────────────────

    def counts(self) -> dict[str, int]:
        w, d = self.warehouses, self.warehouses * DISTRICTS_PER_WAREHOUSE
        return {
            "warehouse": w,
            "district": d,
            "customer": d * self.customers,
            "orders": d * self.orders,
            "order_line": d * self.orders * ORDER_LINES_PER_ORDER,
            "stock": w * self.items,
            "item": self.items,
        }

    def keys(self, table: str) -> Iterator[int]:
        """Generated keys of a table, ascending."""
        W, D = range(1, self.warehouses + 1), range(1, DISTRICTS_PER_WAREHOUSE + 1)
        if table == "warehouse":
            yield from (warehouse_key(w) for w in W)
        elif table == "district":
            yield from (district_key(w, d) for w in W for d in D)
        elif table == "customer":
            yield from (customer_key(w, d, c) for w in W for d in D for c in range(1, self.customers + 1))
        elif table == "orders":
            yield from (order_key(w, d, o) for w in W for d in D for o in range(1, self.orders + 1))
        elif table == "order_line":
            yield from (order_line_key(w, d, o, ol) for w in W for d in D for o in range(1, self.orders + 1)
                        for ol in range(1, ORDER_LINES_PER_ORDER + 1))
        elif table == "stock":
            yield from (stock_key(w, i) for w in W for i in range(1, self.items + 1))
        elif table == "item":
            yield from (item_key(i) for i in range(1, self.items + 1))
        else:
            raise ValueError(f"Unsupported table: {table}")

    def rows(self, table: str) -> list[tuple[int, bytes]]:
        """(key, payload) pairs; payload values come from a per-table seeded stream."""
        spec = self.tables[table]
        keys = list(self.keys(table))
        if table == "district":
            values = np.zeros(len(keys), dtype=np.int64)
        else:
            rng = np.random.default_rng([self.seed, spec.table_id])
            values = rng.integers(0, 1 << 31, size=len(keys))
        return [(k, encode(v)) for k, v in zip(keys, values.tolist())]

    def load(self, cluster: "Cluster", master: "Master", nodes: list[int], k: int = 2) -> list[Partition]:
        """Create, fill and register k partitions per table over `nodes`."""
        parts = []
        for name, spec in self.tables.items():
            cluster.tables[spec.table_id] = spec
            master.pmap.register_table(spec.table_id, spec.key_max)
            rows = self.rows(name)
            bounds = [0] + [rows[j * len(rows) // k][0] for j in range(1, k)] + [spec.key_max]
            bounds = sorted(set(bounds))
            for i, (low, high) in enumerate(zip(bounds, bounds[1:])):
                owner = nodes[i % len(nodes)]
                part = cluster.new_partition(spec, owner, KeyRange(low, high))
                part.bulk_load(
                    RecordVersion(RecordKey(spec.table_id, key), payload, 0, size=spec.record_size)
                    for key, payload in rows if low <= key < high
                )
                for seg in part.segments:
                    cluster.node(seg.home[0]).disks[seg.home[1]].place(seg.segment_id)
                master.register_partition(part)
                parts.append(part)
        logger.info(f"Loaded TPC-C-lite W={self.warehouses} divisor={self.divisor}: "
                    f"{sum(self.counts().values())} rows in {len(parts)} partitions on nodes {nodes}")
        return parts

    # ── parameters / procedures ──────────────────────────────

    def draw(self, rng: np.random.Generator) -> Params:
        w = int(rng.integers(1, self.warehouses + 1))
        d = int(rng.integers(1, DISTRICTS_PER_WAREHOUSE + 1))
        c = int(rng.integers(1, self.customers + 1))
        o = int(rng.integers(1, self.orders + 1))
        items = tuple(int(i) + 1 for i in rng.choice(self.items, size=min(2, self.items), replace=False))
        return Params(w, d, c, o, items)

    def new_order(self, p: Params) -> Callable[["TxnContext"], Iterator]:
        def body(ctx: "TxnContext"):
            dk = district_key(p.w, p.d)
            next_o = decode((yield from ctx.read(DISTRICT, dk)))
            yield from ctx.write(DISTRICT, dk, encode(next_o + 1))
            yield from ctx.read(CUSTOMER, customer_key(p.w, p.d, p.c))
            for i in p.items:
                yield from ctx.read(ITEM, item_key(i))
                sk = stock_key(p.w, i)
                qty = decode((yield from ctx.read(STOCK, sk)))
                yield from ctx.write(STOCK, sk, encode(qty - 1 if qty > 10 else qty + 91))
            o = self.orders + next_o + 1
            yield from ctx.insert(ORDERS, order_key(p.w, p.d, o), encode(p.c))
            for ol, i in enumerate(p.items, 1):
                yield from ctx.insert(ORDER_LINE, order_line_key(p.w, p.d, o, ol), encode(i))
            return o
        return body

    def payment(self, p: Params) -> Callable[["TxnContext"], Iterator]:
        def body(ctx: "TxnContext"):
            yield from ctx.read(WAREHOUSE, warehouse_key(p.w))
            dk = district_key(p.w, p.d)
            ytd = decode((yield from ctx.read(DISTRICT, dk)))
            yield from ctx.write(DISTRICT, dk, encode(ytd))
            ck = customer_key(p.w, p.d, p.c)
            balance = decode((yield from ctx.read(CUSTOMER, ck)))
            yield from ctx.write(CUSTOMER, ck, encode(balance + 1))
            return balance + 1
        return body

    def order_status(self, p: Params) -> Callable[["TxnContext"], Iterator]:
        def body(ctx: "TxnContext"):
            yield from ctx.read(CUSTOMER, customer_key(p.w, p.d, p.c))
            yield from ctx.read(ORDERS, order_key(p.w, p.d, p.o))
            lines = KeyRange(order_line_key(p.w, p.d, p.o, 0), order_line_key(p.w, p.d, p.o + 1, 0))
            return len((yield from ctx.scan(ORDER_LINE, lines)))
        return body

    def delivery(self, p: Params) -> Callable[["TxnContext"], Iterator]:
        def body(ctx: "TxnContext"):
            ok = order_key(p.w, p.d, p.o)
            customer = decode((yield from ctx.read(ORDERS, ok)))
            yield from ctx.write(ORDERS, ok, encode(customer))
            ck = customer_key(p.w, p.d, p.c)
            balance = decode((yield from ctx.read(CUSTOMER, ck)))
            yield from ctx.write(CUSTOMER, ck, encode(balance + 1))
            return customer
        return body

    def stock_level(self, p: Params) -> Callable[["TxnContext"], Iterator]:
        def body(ctx: "TxnContext"):
            yield from ctx.read(DISTRICT, district_key(p.w, p.d))
            low = 0
            for i in p.items:
                if decode((yield from ctx.read(STOCK, stock_key(p.w, i)))) < 20:
                    low += 1
            first = stock_key(p.w, p.items[0])
            for row in (yield from ctx.scan(STOCK, KeyRange(first, first + 2))):
                low += decode(row[1]) < 20
            return low
        return body

    def procedure(self, name: str, p: Params) -> Callable[["TxnContext"], Iterator]:
        procedures = {
            "new_order": self.new_order,
            "payment": self.payment,
            "order_status": self.order_status,
            "delivery": self.delivery,
            "stock_level": self.stock_level,
        }
        if name not in procedures:
            raise ValueError(f"Unsupported transaction: {name}")
        return procedures[name](p)


PROCEDURES = ("new_order", "payment", "order_status", "delivery", "stock_level")
READ_ONLY = frozenset({"order_status", "stock_level"})


def load_flat_table(cluster: "Cluster", master: "Master", table_id: int, name: str, keys: Iterable[int],
                    owner: int, record_size: int, seed: int = 42, key_max: int | None = None) -> Partition:
    """One table in a single partition on `owner`, used by the micro experiments."""
    keys = sorted(keys)
    spec = TableSpec(table_id, name, record_size, key_max or (keys[-1] + 1 if keys else 1))
    cluster.tables[table_id] = spec
    master.pmap.register_table(table_id, spec.key_max)
    values = np.random.default_rng([seed, table_id]).integers(0, 1 << 31, size=len(keys)).tolist()
    part = cluster.new_partition(spec, owner, KeyRange(0, spec.key_max))
    part.bulk_load(RecordVersion(RecordKey(table_id, k), encode(v), 0, size=record_size)
                   for k, v in zip(keys, values))
    for seg in part.segments:
        cluster.node(seg.home[0]).disks[seg.home[1]].place(seg.segment_id)
    master.register_partition(part)
    return part
