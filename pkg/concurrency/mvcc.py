# elasticdb/concurrency/mvcc.py
"""
Version-chain operations and the two pluggable concurrency engines.

A chain is the list of RecordVersions of one key, oldest first, with at
most one uncommitted version at the end.

Engines:
  MvccEngine  snapshot reads that never block, first-writer-wins plus a
              snapshot-isolation check on writes, GC piggybacked on
              commit once a chain grows past the threshold.
  MglEngine   single-version store. Reads take the newest committed
              version (locks provide isolation), commit drops the
              predecessor at once. Locking itself happens in LockTable.
"""

from __future__ import annotations

from elasticdb.concurrency.txn import Transaction
from elasticdb.core.errors import WriteConflict
from elasticdb.core.model import OPEN_TS, RecordKey, RecordVersion


def visible(version: RecordVersion, snapshot_ts: int) -> bool:
    return version.committed and version.begin_ts <= snapshot_ts < version.end_ts


def visible_version(txn: Transaction, chain: list[RecordVersion] | None) -> RecordVersion | None:
    """Own pending write first, else the version committed as of the snapshot."""
    if not chain:
        return None
    last = chain[-1]
    if not last.committed and last.creator_txn == txn.txn_id:
        return None if last.deleted else last
    for version in reversed(chain):
        if visible(version, txn.snapshot_ts):
            return None if version.deleted else version
    return None


def mvcc_read(txn: Transaction, key: RecordKey, chain: list[RecordVersion] | None) -> bytes | None:
    version = visible_version(txn, chain)
    return None if version is None else version.payload


def newest_committed(chain: list[RecordVersion] | None) -> RecordVersion | None:
    if not chain:
        return None
    for version in reversed(chain):
        if version.committed:
            return version
    return None


def check_write(txn: Transaction, chain: list[RecordVersion] | None, snapshot_check: bool = True) -> None:
    """Raise WriteConflict if another txn already claimed or changed the key."""
    if not chain:
        return
    last = chain[-1]
    if not last.committed and last.creator_txn != txn.txn_id:
        raise WriteConflict(txn.txn_id, f"key {last.key.primary_key} has a pending write by txn {last.creator_txn}")
    if snapshot_check:
        newest = newest_committed(chain)
        if newest is not None and newest.begin_ts > txn.snapshot_ts:
            raise WriteConflict(txn.txn_id, f"key {newest.key.primary_key} changed after snapshot")


def mvcc_write(
    txn: Transaction,
    key: RecordKey,
    payload: bytes,
    chain: list[RecordVersion] | None,
    size: int = 0,
    deleted: bool = False,
    snapshot_check: bool = True,
) -> RecordVersion:
    """Append (or overwrite) the txn's OPEN version; `chain` may be None for a new key.

    Returns the pending version. When `chain` is None the caller places
    the returned version itself.
    """
    check_write(txn, chain, snapshot_check)
    if chain and not chain[-1].committed:
        pending = chain[-1]
        pending.payload, pending.deleted = payload, deleted
        return pending
    version = RecordVersion(key, payload, None, OPEN_TS, txn.txn_id, deleted, size)
    if chain is not None:
        chain.append(version)
    return version


def mvcc_commit(chain: list[RecordVersion], version: RecordVersion, commit_ts: int) -> None:
    predecessor = newest_committed(chain)
    if predecessor is not None:
        predecessor.end_ts = commit_ts
    version.begin_ts = commit_ts


def mvcc_abort(chain: list[RecordVersion], version: RecordVersion) -> None:
    if version in chain:
        chain.remove(version)


def mvcc_gc(chain: list[RecordVersion], oldest_active_snapshot: int) -> list[RecordVersion]:
    """Drop versions nobody can see any more; keeps the newest committed one.

    A chain whose only survivor is a tombstone older than every snapshot
    is dead and comes back empty.
    """
    newest = newest_committed(chain)
    kept = [v for v in chain if not v.committed or v is newest or v.end_ts > oldest_active_snapshot]
    if len(kept) == 1 and kept[0] is newest and newest.deleted and newest.begin_ts <= oldest_active_snapshot:
        return []
    return kept


# ── engines ──────────────────────────────────────────────────

class CCEngine:
    name = "base"
    uses_locks = False

    def __init__(self, gc_chain_threshold: int = 4):
        self.gc_chain_threshold = gc_chain_threshold

    def read(self, txn: Transaction, chain: list[RecordVersion] | None) -> RecordVersion | None:
        raise NotImplementedError

    def write(self, txn: Transaction, key: RecordKey, payload: bytes, chain, size: int, deleted: bool = False):
        raise NotImplementedError

    def after_commit(self, chain: list[RecordVersion], oldest_active_snapshot: int) -> list[RecordVersion]:
        return chain


class MvccEngine(CCEngine):
    name = "mvcc"

    def read(self, txn, chain):
        return visible_version(txn, chain)

    def write(self, txn, key, payload, chain, size, deleted=False):
        return mvcc_write(txn, key, payload, chain, size, deleted)

    def after_commit(self, chain, oldest_active_snapshot):
        if len(chain) > self.gc_chain_threshold:
            return mvcc_gc(chain, oldest_active_snapshot)
        return chain


class MglEngine(CCEngine):
    name = "mgl"
    uses_locks = True

    def read(self, txn, chain):
        if chain and not chain[-1].committed and chain[-1].creator_txn == txn.txn_id:
            return None if chain[-1].deleted else chain[-1]
        newest = newest_committed(chain)
        return None if newest is None or newest.deleted else newest

    def write(self, txn, key, payload, chain, size, deleted=False):
        return mvcc_write(txn, key, payload, chain, size, deleted, snapshot_check=False)

    def after_commit(self, chain, oldest_active_snapshot):
        newest = newest_committed(chain)
        if newest is None:
            return chain
        if newest.deleted:
            return [v for v in chain if not v.committed]
        return [v for v in chain if v is newest or not v.committed]


def make_engine(name: str, gc_chain_threshold: int = 4) -> CCEngine:
    engines = {"mvcc": MvccEngine, "mgl": MglEngine}
    if name not in engines:
        raise ValueError(f"Unsupported concurrency engine: {name}")
    return engines[name](gc_chain_threshold)
