# elasticdb/concurrency/wal.py
"""
Per-node write-ahead log.

An append-only in-memory sequence; the node decides whether a flush
costs a local disk write or a network send to a log-shipping helper.
Partition moves write a single Checkpoint record on the old owner and no
per-record move logging; after that checkpoint the old owner never logs
for the moved range again.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from elasticdb.core.errors import OwnershipError

logger = logging.getLogger("elasticdb.concurrency.wal")


class WalOp(str, Enum):
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"
    CHECKPOINT = "checkpoint"


@dataclass(frozen=True, slots=True)
class WalRecord:
    lsn: int
    node_id: int
    txn_id: int
    partition_id: int
    op: WalOp
    key: int | None
    before: int = 0
    after: int = 0


class Wal:
    def __init__(self, node_id: int, owns: Callable[[int], bool] | None = None):
        self.node_id = node_id
        self.records: list[WalRecord] = []
        self.shipping_to: int | None = None
        self._owns = owns
        self._next_lsn = 1
        self.bytes_appended = 0

    def append(
        self,
        txn_id: int,
        partition_id: int,
        op: WalOp,
        key: int | None = None,
        before: int = 0,
        after: int = 0,
        record_bytes: int = 64,
    ) -> WalRecord:
        """Append one record; user writes require this node to own the partition."""
        if op is not WalOp.CHECKPOINT and self._owns is not None and not self._owns(partition_id):
            raise OwnershipError(f"node {self.node_id} does not own partition {partition_id}")
        record = WalRecord(self._next_lsn, self.node_id, txn_id, partition_id, op, key, before, after)
        self._next_lsn += 1
        self.records.append(record)
        self.bytes_appended += record_bytes
        return record

    def ship_to(self, helper: int | None) -> None:
        self.shipping_to = helper
        if helper is None:
            logger.info(f"Node {self.node_id}: log shipping stopped")
        else:
            logger.info(f"Node {self.node_id}: shipping log to helper {helper}")

    def records_for(self, partition_id: int) -> list[WalRecord]:
        return [r for r in self.records if r.partition_id == partition_id]

    def last_checkpoint(self, partition_id: int) -> WalRecord | None:
        for r in reversed(self.records):
            if r.partition_id == partition_id and r.op is WalOp.CHECKPOINT:
                return r
        return None

    def export(self) -> str:
        return "".join(
            f"{r.lsn} {r.txn_id} {r.op.value} {'-' if r.key is None else r.key}\n" for r in self.records
        )
