# elasticdb/concurrency/gate.py
"""
Partition write gate: the partition-level read lock used by segment moves.

Writers register the keys they touch in the partition. A mover fences a
key range (new writers to it must wait) and then waits until the writers
already registered in that range have committed or aborted. Writers that
registered before the fence may keep writing until they finish; this is
what keeps a multi-statement transaction from deadlocking against the
copy it is waiting for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import simpy

from elasticdb.core.model import KeyRange


@dataclass(eq=False)
class Fence:
    key_range: KeyRange
    lifted: simpy.Event


@dataclass
class WriteGate:
    env: simpy.Environment
    writers: dict[int, set[int]] = field(default_factory=dict)
    fences: list[Fence] = field(default_factory=list)
    _drain_waits: list[tuple[KeyRange, simpy.Event]] = field(default_factory=list)

    def is_registered(self, txn_id: int) -> bool:
        return txn_id in self.writers

    def holds_in(self, txn_id: int, key_range: KeyRange) -> bool:
        """True if txn already wrote inside key_range (a drain will wait for it)."""
        return any(k in key_range for k in self.writers.get(txn_id, ()))

    def fence_for(self, key: int) -> Fence | None:
        for fence in self.fences:
            if key in fence.key_range:
                return fence
        return None

    def register(self, txn_id: int, key: int) -> None:
        self.writers.setdefault(txn_id, set()).add(key)

    def release(self, txn_id: int) -> None:
        if self.writers.pop(txn_id, None) is None:
            return
        still = []
        for key_range, ev in self._drain_waits:
            if self._busy(key_range):
                still.append((key_range, ev))
            else:
                ev.succeed()
        self._drain_waits = still

    def _busy(self, key_range: KeyRange) -> bool:
        return any(k in key_range for keys in self.writers.values() for k in keys)

    def fence(self, key_range: KeyRange) -> Fence:
        fence = Fence(key_range, self.env.event())
        self.fences.append(fence)
        return fence

    def drained(self, key_range: KeyRange) -> simpy.Event:
        ev = self.env.event()
        if self._busy(key_range):
            self._drain_waits.append((key_range, ev))
        else:
            ev.succeed()
        return ev

    def lift(self, fence: Fence) -> None:
        if fence in self.fences:
            self.fences.remove(fence)
            fence.lifted.succeed()
