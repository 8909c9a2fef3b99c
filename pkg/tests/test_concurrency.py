# elasticdb/tests/test_concurrency.py
"""
Tests for the timestamp oracle, version chains, both concurrency engines,
the MGL lock table, the write-ahead log and the partition write gate.
"""

import pytest
import simpy

from elasticdb.concurrency.gate import WriteGate
from elasticdb.concurrency.locks import LockMode, LockTable, combine, compatible
from elasticdb.concurrency.mvcc import (
    MglEngine,
    MvccEngine,
    check_write,
    make_engine,
    mvcc_abort,
    mvcc_commit,
    mvcc_gc,
    mvcc_write,
    visible_version,
)
from elasticdb.concurrency.txn import TimestampOracle, Transaction, TxnStatus
from elasticdb.concurrency.wal import Wal, WalOp
from elasticdb.core.errors import DeadlockAbort, OwnershipError, WriteConflict
from elasticdb.core.model import KeyRange, RecordKey, RecordVersion, check_version_chain

KEY = RecordKey(1, 10)


def committed(payload: bytes, begin: int, end: int | None = None) -> RecordVersion:
    v = RecordVersion(KEY, payload, begin)
    if end is not None:
        v.end_ts = end
    return v


class TestOracle:
    def test_snapshot_sees_prior_commits_only(self):
        oracle = TimestampOracle()
        writer = oracle.begin()
        before = oracle.begin()
        ts = oracle.commit(writer)
        after = oracle.begin()
        assert ts == 1
        assert before.snapshot_ts == 0
        assert after.snapshot_ts == 1
        assert writer.status is TxnStatus.COMMITTED

    def test_oldest_active_snapshot(self):
        oracle = TimestampOracle()
        old = oracle.begin()
        oracle.commit(oracle.begin())
        assert oracle.oldest_active_snapshot() == 0
        oracle.abort(old)
        assert oracle.oldest_active_snapshot() == 1

    def test_on_drained_waits_for_older_snapshots(self):
        oracle = TimestampOracle()
        old = oracle.begin()
        oracle.commit(oracle.begin())
        fired = []
        oracle.on_drained(1, lambda: fired.append(True))
        assert not fired
        oracle.begin()
        assert not fired
        oracle.abort(old)
        assert fired == [True]

    def test_txn_ids_increase(self):
        oracle = TimestampOracle()
        assert oracle.begin().txn_id < oracle.begin().txn_id


class TestVersionChains:
    def test_snapshot_visibility(self):
        chain = [committed(b"a", 1, 3), committed(b"b", 3)]
        assert visible_version(Transaction(1, 2), chain).payload == b"a"
        assert visible_version(Transaction(2, 3), chain).payload == b"b"
        assert visible_version(Transaction(3, 0), chain) is None

    def test_own_pending_write_visible_to_writer_only(self):
        chain = [committed(b"a", 1)]
        writer, other = Transaction(5, 1), Transaction(6, 1)
        mvcc_write(writer, KEY, b"mine", chain, size=32)
        assert visible_version(writer, chain).payload == b"mine"
        assert visible_version(other, chain).payload == b"a"

    def test_first_writer_wins(self):
        chain = [committed(b"a", 1)]
        mvcc_write(Transaction(5, 1), KEY, b"x", chain)
        with pytest.raises(WriteConflict):
            check_write(Transaction(6, 1), chain)

    def test_write_after_newer_commit_conflicts(self):
        chain = [committed(b"a", 1, 3), committed(b"b", 3)]
        with pytest.raises(WriteConflict):
            mvcc_write(Transaction(7, 2), KEY, b"c", chain)

    def test_repeated_write_overwrites_pending(self):
        chain = [committed(b"a", 1)]
        txn = Transaction(5, 1)
        first = mvcc_write(txn, KEY, b"x", chain)
        second = mvcc_write(txn, KEY, b"y", chain)
        assert first is second
        assert len(chain) == 2
        assert chain[-1].payload == b"y"

    def test_commit_links_predecessor(self):
        chain = [committed(b"a", 1)]
        pending = mvcc_write(Transaction(5, 1), KEY, b"b", chain)
        mvcc_commit(chain, pending, 4)
        assert chain[0].end_ts == 4
        assert check_version_chain(chain) is None

    def test_abort_removes_pending(self):
        chain = [committed(b"a", 1)]
        pending = mvcc_write(Transaction(5, 1), KEY, b"b", chain)
        mvcc_abort(chain, pending)
        assert [v.payload for v in chain] == [b"a"]

    def test_gc_keeps_what_snapshots_need(self):
        chain = [committed(b"a", 1, 3), committed(b"b", 3, 5), committed(b"c", 5)]
        assert [v.payload for v in mvcc_gc(chain, 4)] == [b"b", b"c"]
        assert [v.payload for v in mvcc_gc(chain, 5)] == [b"c"]

    def test_gc_drops_dead_tombstone(self):
        tomb = committed(b"", 2)
        tomb.deleted = True
        assert mvcc_gc([committed(b"a", 1, 2), tomb], 3) == []


class TestEngines:
    def test_factory(self):
        assert isinstance(make_engine("mvcc"), MvccEngine)
        assert make_engine("mgl").uses_locks
        with pytest.raises(ValueError):
            make_engine("occ")

    def test_mgl_reads_newest_committed(self):
        chain = [committed(b"a", 1, 3), committed(b"b", 3)]
        assert MglEngine().read(Transaction(1, 0), chain).payload == b"b"

    def test_mgl_keeps_single_version(self):
        chain = [committed(b"a", 1, 3), committed(b"b", 3)]
        assert [v.payload for v in MglEngine().after_commit(chain, 0)] == [b"b"]

    def test_mvcc_gc_threshold(self):
        engine = MvccEngine(gc_chain_threshold=2)
        chain = [committed(b"a", 1, 3), committed(b"b", 3, 5), committed(b"c", 5)]
        assert len(engine.after_commit(chain[:2], 9)) == 2
        assert [v.payload for v in engine.after_commit(chain, 9)] == [b"c"]


class TestLockModes:
    @pytest.mark.parametrize("a,b,expected", [
        (LockMode.R, LockMode.R, True),
        (LockMode.R, LockMode.X, False),
        (LockMode.IX, LockMode.IX, True),
        (LockMode.IR, LockMode.R, True),
        (LockMode.IX, LockMode.R, False),
        (LockMode.IR, LockMode.X, False),
    ])
    def test_matrix(self, a, b, expected):
        assert compatible(a, b) is expected
        assert compatible(b, a) is expected

    def test_upgrade(self):
        assert combine(LockMode.IX, LockMode.IR) is LockMode.IX
        assert combine(LockMode.IR, LockMode.R) is LockMode.R
        assert combine(LockMode.R, LockMode.IX) is LockMode.X


class TestLockTable:
    RES = ("k", 1, 10)

    def test_shared_grants(self):
        table = LockTable()
        assert table.acquire(1, self.RES, LockMode.R).granted
        assert table.acquire(2, self.RES, LockMode.R).granted
        assert table.holders(self.RES) == {1: LockMode.R, 2: LockMode.R}

    def test_exclusive_waits_then_granted_on_release(self):
        table = LockTable()
        table.acquire(1, self.RES, LockMode.R)
        request = table.acquire(2, self.RES, LockMode.X)
        granted = []
        request.on_grant = lambda r: granted.append(r.txn_id)
        assert not request.granted
        assert table.release_all(1) == 1
        assert granted == [2]
        assert table.holders(self.RES) == {2: LockMode.X}

    def test_fifo_queue_blocks_later_compatible_request(self):
        table = LockTable()
        table.acquire(1, self.RES, LockMode.R)
        table.acquire(2, self.RES, LockMode.X)
        third = table.acquire(3, self.RES, LockMode.R)
        assert not third.granted
        assert table.waiters(self.RES) == [2, 3]

    def test_requester_is_youngest_victim(self):
        table = LockTable()
        a, b = ("k", 1, 1), ("k", 1, 2)
        table.acquire(1, a, LockMode.X)
        table.acquire(2, b, LockMode.X)
        table.acquire(1, b, LockMode.X)
        with pytest.raises(DeadlockAbort) as exc:
            table.acquire(2, a, LockMode.X)
        assert exc.value.txn_id == 2
        assert table.deadlocks == 1

    def test_waiting_youngest_is_aborted(self):
        table = LockTable()
        a, b = ("k", 1, 1), ("k", 1, 2)
        table.acquire(1, a, LockMode.X)
        table.acquire(2, b, LockMode.X)
        waiting = table.acquire(2, a, LockMode.X)
        aborted = []
        waiting.on_abort = lambda r, exc: aborted.append(exc.txn_id)
        mine = table.acquire(1, b, LockMode.X)
        assert aborted == [2]
        assert waiting.aborted
        assert not mine.granted
        table.release_all(2)
        assert table.holders(b) == {1: LockMode.X}

    def test_reacquire_held_mode(self):
        table = LockTable()
        table.acquire(1, self.RES, LockMode.X)
        assert table.acquire(1, self.RES, LockMode.R).granted
        assert table.grants == 1


class TestWal:
    def test_append_assigns_lsns(self):
        wal = Wal(1)
        first = wal.append(5, 1, WalOp.INSERT, 3)
        second = wal.append(5, 1, WalOp.UPDATE, 3)
        assert (first.lsn, second.lsn) == (1, 2)
        assert wal.bytes_appended == 128

    def test_only_owner_logs_user_writes(self):
        wal = Wal(1, owns=lambda pid: pid == 7)
        with pytest.raises(OwnershipError):
            wal.append(5, 8, WalOp.UPDATE, 3)
        checkpoint = wal.append(0, 8, WalOp.CHECKPOINT)
        assert wal.last_checkpoint(8) is checkpoint
        assert wal.last_checkpoint(7) is None

    def test_export(self):
        wal = Wal(1)
        wal.append(5, 1, WalOp.UPDATE, 3)
        wal.append(0, 1, WalOp.CHECKPOINT)
        assert wal.export() == "1 5 update 3\n2 0 checkpoint -\n"

    def test_shipping_target(self):
        wal = Wal(1)
        wal.ship_to(4)
        assert wal.shipping_to == 4
        wal.ship_to(None)
        assert wal.shipping_to is None


class TestWriteGate:
    @pytest.fixture
    def gate(self):
        return WriteGate(simpy.Environment())

    def test_drain_waits_for_registered_writer(self, gate):
        gate.register(1, 5)
        drained = gate.drained(KeyRange(0, 10))
        assert not drained.triggered
        gate.release(1)
        assert drained.triggered

    def test_drain_ignores_writers_outside_range(self, gate):
        gate.register(1, 50)
        assert gate.drained(KeyRange(0, 10)).triggered

    def test_fence(self, gate):
        gate.register(1, 5)
        fence = gate.fence(KeyRange(0, 10))
        assert gate.fence_for(5) is fence
        assert gate.holds_in(1, fence.key_range)
        assert not gate.holds_in(2, fence.key_range)
        gate.lift(fence)
        assert fence.lifted.triggered
        assert gate.fence_for(5) is None
