# elasticdb/concurrency/txn.py
"""
Transactions and the logical timestamp oracle.

The oracle lives on the master. `begin` fixes snapshot_ts to the current
commit counter; every commit (user or system) advances it by one, so a
transaction begun after a commit sees exactly that commit and nothing
later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable


class TxnMode(str, Enum):
    READ_ONLY = "read_only"
    READ_WRITE = "read_write"


class TxnKind(str, Enum):
    USER = "user"
    SYSTEM = "system"


class TxnStatus(str, Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(eq=False)
class Transaction:
    txn_id: int
    snapshot_ts: int
    mode: TxnMode = TxnMode.READ_WRITE
    kind: TxnKind = TxnKind.USER
    status: TxnStatus = TxnStatus.ACTIVE
    touched: set[int] = field(default_factory=set)
    participants: set[int] = field(default_factory=set)
    commit_ts: int | None = None

    @property
    def active(self) -> bool:
        return self.status is TxnStatus.ACTIVE


class TimestampOracle:
    def __init__(self):
        self.commit_counter = 0
        self._next_txn = 1
        self.active: dict[int, Transaction] = {}
        self._drain_watchers: list[tuple[int, Callable[[], None]]] = []

    def begin(self, mode: TxnMode = TxnMode.READ_WRITE, kind: TxnKind = TxnKind.USER) -> Transaction:
        txn = Transaction(self._next_txn, self.commit_counter, mode, kind)
        self._next_txn += 1
        self.active[txn.txn_id] = txn
        return txn

    def next_commit_ts(self) -> int:
        self.commit_counter += 1
        return self.commit_counter

    def finish(self, txn: Transaction, status: TxnStatus) -> None:
        txn.status = status
        self.active.pop(txn.txn_id, None)
        if self._drain_watchers:
            self._fire_drained()

    def on_drained(self, ts: int, callback: Callable[[], None]) -> None:
        """Call `callback` once every transaction with snapshot_ts < ts has ended."""
        self._drain_watchers.append((ts, callback))
        self._fire_drained()

    def _fire_drained(self) -> None:
        oldest = self.oldest_active_snapshot()
        ready = [w for w in self._drain_watchers if w[0] <= oldest]
        if ready:
            self._drain_watchers = [w for w in self._drain_watchers if w[0] > oldest]
            for _, callback in ready:
                callback()

    def commit(self, txn: Transaction) -> int:
        txn.commit_ts = self.next_commit_ts()
        self.finish(txn, TxnStatus.COMMITTED)
        return txn.commit_ts

    def abort(self, txn: Transaction) -> None:
        self.finish(txn, TxnStatus.ABORTED)

    def oldest_active_snapshot(self) -> int:
        """Smallest snapshot any live transaction may still read at."""
        if not self.active:
            return self.commit_counter
        return min(t.snapshot_ts for t in self.active.values())

    @property
    def next_txn_id(self) -> int:
        return self._next_txn
