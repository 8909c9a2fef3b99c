# elasticdb/concurrency/locks.py
"""
Multi-granularity lock table with RX modes (plus intention modes).

Design rules:
  - Resources are tuples: ("p", partition_id) or ("k", table_id, key).
  - Modes IR/IX/R/X with the standard MGL matrix; R and X are the
    record-level modes, IR/IX announce intent on the partition.
  - FIFO wait queue per resource: a request is granted only if it is
    compatible with every holder and with every earlier waiter.
  - Strict: locks are released only by release_all() at commit/abort.
  - Deadlocks are checked on every block via a waits-for DFS; the
    youngest transaction (highest txn_id) in the cycle is the victim.
  - No threads here: a queued request fires `on_grant` or `on_abort`
    later, and the caller decides how to suspend (a simpy event).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from elasticdb.core.errors import CorruptionError, DeadlockAbort

logger = logging.getLogger("elasticdb.concurrency.locks")


class LockMode(str, Enum):
    IR = "IR"
    IX = "IX"
    R = "R"
    X = "X"


_COMPATIBLE = {
    LockMode.IR: {LockMode.IR, LockMode.IX, LockMode.R},
    LockMode.IX: {LockMode.IR, LockMode.IX},
    LockMode.R: {LockMode.IR, LockMode.R},
    LockMode.X: set(),
}

# mode held + mode requested -> mode needed
_COVERS = {
    LockMode.IR: {LockMode.IR},
    LockMode.IX: {LockMode.IR, LockMode.IX},
    LockMode.R: {LockMode.IR, LockMode.R},
    LockMode.X: {LockMode.IR, LockMode.IX, LockMode.R, LockMode.X},
}


def compatible(a: LockMode, b: LockMode) -> bool:
    return b in _COMPATIBLE[a]


def combine(held: LockMode, wanted: LockMode) -> LockMode:
    if wanted in _COVERS[held]:
        return held
    if held in _COVERS[wanted]:
        return wanted
    return LockMode.X


def partition_resource(partition_id: int) -> tuple:
    return ("p", partition_id)


def key_resource(table_id: int, key: int) -> tuple:
    return ("k", table_id, key)


# ─── Lock request ────────────────────────────────────────────

@dataclass(eq=False)
class LockRequest:
    txn_id: int
    resource: tuple
    mode: LockMode
    granted: bool = False
    aborted: bool = False
    on_grant: Callable[["LockRequest"], None] | None = None
    on_abort: Callable[["LockRequest", DeadlockAbort], None] | None = None


class _ResourceLock:
    __slots__ = ("holders", "queue")

    def __init__(self):
        self.holders: dict[int, LockMode] = {}
        self.queue: list[LockRequest] = []

    def blocks(self, txn_id: int, mode: LockMode, ahead: list[LockRequest]) -> list[int]:
        """Transactions that stop `mode` from being granted to txn_id."""
        blockers = [t for t, m in self.holders.items() if t != txn_id and not compatible(m, mode)]
        blockers += [r.txn_id for r in ahead if r.txn_id != txn_id and not compatible(r.mode, mode)]
        return blockers


# ─── Lock table ──────────────────────────────────────────────

class LockTable:
    def __init__(self, node_id: int = 0):
        self.node_id = node_id
        self._resources: dict[tuple, _ResourceLock] = {}
        self._held: dict[int, set[tuple]] = {}
        self._waiting: dict[int, LockRequest] = {}
        self.grants = 0
        self.waits = 0
        self.deadlocks = 0

    def acquire(self, txn_id: int, resource: tuple, mode: LockMode) -> LockRequest:
        """Grant now (request.granted) or queue; raises DeadlockAbort if the requester is the victim."""
        res = self._resources.setdefault(resource, _ResourceLock())
        held = res.holders.get(txn_id)
        wanted = mode if held is None else combine(held, mode)
        request = LockRequest(txn_id, resource, wanted)
        if held is not None and held == wanted:
            request.granted = True
            return request
        if not res.blocks(txn_id, wanted, res.queue):
            self._grant(res, request)
            return request

        res.queue.append(request)
        self._waiting[txn_id] = request
        self.waits += 1
        cycle = self._find_cycle(txn_id)
        if cycle:
            self.deadlocks += 1
            victim = max(cycle)
            logger.debug(f"Node {self.node_id}: deadlock {sorted(cycle)}, victim txn {victim}")
            if victim == txn_id:
                self._dequeue(request)
                raise DeadlockAbort(txn_id, "deadlock victim")
            self._abort_waiter(self._waiting[victim])
        return request

    def _grant(self, res: _ResourceLock, request: LockRequest) -> None:
        for t, m in res.holders.items():
            if t != request.txn_id and not compatible(m, request.mode):
                raise CorruptionError(f"incompatible grant {request.mode} on {request.resource} while txn {t} holds {m}")
        res.holders[request.txn_id] = request.mode
        self._held.setdefault(request.txn_id, set()).add(request.resource)
        request.granted = True
        self.grants += 1

    def _dequeue(self, request: LockRequest) -> None:
        res = self._resources.get(request.resource)
        if res is not None and request in res.queue:
            res.queue.remove(request)
        if self._waiting.get(request.txn_id) is request:
            del self._waiting[request.txn_id]

    def _abort_waiter(self, request: LockRequest) -> None:
        self._dequeue(request)
        request.aborted = True
        if request.on_abort is not None:
            request.on_abort(request, DeadlockAbort(request.txn_id, "deadlock victim"))
        self._wake(request.resource)

    def cancel(self, txn_id: int) -> None:
        """Withdraw a pending request (the waiter gave up)."""
        request = self._waiting.get(txn_id)
        if request is not None:
            self._dequeue(request)
            self._wake(request.resource)

    def release_all(self, txn_id: int) -> int:
        self.cancel(txn_id)
        resources = self._held.pop(txn_id, set())
        for resource in sorted(resources, key=repr):
            res = self._resources[resource]
            res.holders.pop(txn_id, None)
            self._wake(resource)
        return len(resources)

    def _wake(self, resource: tuple) -> None:
        res = self._resources.get(resource)
        if res is None:
            return
        while res.queue:
            head = res.queue[0]
            if res.blocks(head.txn_id, head.mode, []):
                break
            res.queue.pop(0)
            self._waiting.pop(head.txn_id, None)
            self._grant(res, head)
            if head.on_grant is not None:
                head.on_grant(head)
        if not res.holders and not res.queue:
            del self._resources[resource]

    # ── waits-for graph ──────────────────────────────────────

    def _waits_for(self, txn_id: int) -> list[int]:
        request = self._waiting.get(txn_id)
        if request is None:
            return []
        res = self._resources[request.resource]
        ahead = res.queue[: res.queue.index(request)]
        return res.blocks(txn_id, request.mode, ahead)

    def _find_cycle(self, start: int) -> list[int] | None:
        path: list[int] = []
        on_path: set[int] = set()
        done: set[int] = set()

        def dfs(t: int) -> list[int] | None:
            path.append(t)
            on_path.add(t)
            for nxt in self._waits_for(t):
                if nxt in on_path:
                    return path[path.index(nxt):]
                if nxt not in done:
                    found = dfs(nxt)
                    if found:
                        return found
            on_path.discard(t)
            done.add(t)
            path.pop()
            return None

        return dfs(start)

    # ── introspection ────────────────────────────────────────

    def holders(self, resource: tuple) -> dict[int, LockMode]:
        res = self._resources.get(resource)
        return dict(res.holders) if res else {}

    def waiters(self, resource: tuple) -> list[int]:
        res = self._resources.get(resource)
        return [r.txn_id for r in res.queue] if res else []

    def held_by(self, txn_id: int) -> set[tuple]:
        return set(self._held.get(txn_id, set()))
