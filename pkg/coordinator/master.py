# elasticdb/coordinator/master.py
"""
Master node: query admission, routing and commit coordination.

What it does:
  - Sends each record operation to the node(s) the partition map names,
    following NOT_HERE answers to the next candidate and REDIRECT
    answers one hop further (the forwarding node passes the request on).
  - Splits scans by map entry and stitches per-node partial answers,
    chasing whatever ranges a node reports as unserved.
  - Commits with a prepare round (participants force their log), a
    timestamp from the oracle, then a synchronous apply at every
    participant.

Design decisions:
  - The master itself is not CPU-modelled; only its messages cost time.
  - Dual pointers are tried new owner first, then old.
  - A request whose candidates are all exhausted re-reads the map after a
    short back-off; the map may have moved on in the meantime.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Callable, Generator

from elasticdb.cluster.messages import CONTROL_BYTES, OpKind, OpResult, RecordOp, Reply
from elasticdb.cluster.monitor import Breakdown
from elasticdb.cluster.runtime import MASTER_ID
from elasticdb.concurrency.txn import Transaction, TxnKind, TxnMode, TxnStatus
from elasticdb.coordinator.router import PartitionMap, route, route_range
from elasticdb.core.errors import RoutingError, TransactionAborted
from elasticdb.core.model import KeyRange
from elasticdb.storage.partition import Partition

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.coordinator.master")

MAX_REROUTES = 200


class Master:
    def __init__(self, cluster: "Cluster"):
        self.cluster = cluster
        self.env = cluster.env
        self.cfg = cluster.cfg
        self.pmap = PartitionMap()
        self.commits = 0
        self.aborts = 0
        self.redirects = 0
        self.reroutes = 0

    # ── map maintenance ──────────────────────────────────────

    def register_partition(self, part: Partition) -> None:
        self.pmap.assign(part.table.table_id, part.key_range, part.owner)

    def move_started(self, table_id: int, key_range: KeyRange, target: int, source: int) -> None:
        self.pmap.mark_moving(table_id, key_range, target, source)

    def move_finished(self, table_id: int, key_range: KeyRange) -> None:
        self.pmap.complete_move(table_id, key_range)

    def move_aborted(self, table_id: int, key_range: KeyRange) -> None:
        self.pmap.abort_move(table_id, key_range)

    # ── messaging ────────────────────────────────────────────

    def _call(self, src: int, node_id: int, txn: Transaction, op: RecordOp, bd: Breakdown | None):
        """Carry op from src to node_id and run it there; the reply is not sent yet."""
        yield from self.cluster.transmit(src, node_id, op.request_bytes(), bd)
        txn.participants.add(node_id)
        return (yield from self.cluster.node(node_id).handle_op(txn, op, bd))

    def _reply(self, node_id: int, result: OpResult, bd: Breakdown | None):
        yield from self.cluster.transmit(node_id, MASTER_ID, result.response_bytes(self.cfg.record_size), bd)

    def request(self, txn: Transaction, op: RecordOp, bd: Breakdown | None = None):
        """Point operation; returns the OK OpResult from whichever node served it."""
        for _ in range(MAX_REROUTES):
            candidates = route(self.pmap, op.table_id, op.key)
            for node_id in candidates:
                result = yield from self._call(MASTER_ID, node_id, txn, op, bd)
                served_by = node_id
                while result.status is Reply.REDIRECT and result.hint is not None:
                    self.redirects += 1
                    hop = result.hint
                    result = yield from self._call(served_by, hop, txn, op, bd)
                    served_by = hop
                yield from self._reply(served_by, result, bd)
                if result.status is Reply.OK:
                    return result
            self.reroutes += 1
            yield self.env.timeout(self.cfg.net_base_latency)
        raise RoutingError(f"table {op.table_id} key {op.key}: no node accepted the request")

    def scan(self, txn: Transaction, table_id: int, key_range: KeyRange, bd: Breakdown | None = None):
        """Range read stitched across nodes; returns rows sorted by key."""
        rows: list[tuple[int, bytes]] = []
        work: list[tuple[KeyRange, list[int], int]] = [
            (piece, nodes, 0) for piece, nodes in route_range(self.pmap, table_id, key_range)
        ]
        while work:
            piece, candidates, attempts = work.pop(0)
            if attempts > MAX_REROUTES:
                raise RoutingError(f"table {table_id} {piece}: unserved after {attempts} attempts")
            if not candidates:
                self.reroutes += 1
                yield self.env.timeout(self.cfg.net_base_latency)
                work.extend((p, n, attempts + 1) for p, n in route_range(self.pmap, table_id, piece))
                continue
            node_id, rest = candidates[0], candidates[1:]
            op = RecordOp(OpKind.SCAN, table_id, key_range=piece)
            result = yield from self._call(MASTER_ID, node_id, txn, op, bd)
            yield from self._reply(node_id, result, bd)
            rows.extend(result.rows)
            for miss in result.unserved:
                if miss.reply is Reply.REDIRECT and miss.hint is not None:
                    self.redirects += 1
                    work.append((miss.key_range, [miss.hint], attempts + 1))
                else:
                    nxt = [n for n in rest if n != node_id]
                    if miss.hint is not None and miss.hint not in nxt:
                        nxt.append(miss.hint)
                    work.append((miss.key_range, nxt, attempts + 1))
        rows.sort()
        return rows

    # ── commit / abort ───────────────────────────────────────

    def commit(self, txn: Transaction, bd: Breakdown | None = None):
        """Prepare every writing participant, draw the commit ts, apply everywhere."""
        nodes = [self.cluster.node(n) for n in sorted(txn.participants)]
        writers = [n for n in nodes if n.pending.get(txn.txn_id)]
        if not writers:
            self.cluster.oracle.finish(txn, TxnStatus.COMMITTED)
            for node in nodes:
                node.apply_commit(txn, 0)
            return None
        for node in writers:
            yield from self.cluster.transmit(MASTER_ID, node.node_id, CONTROL_BYTES, bd)
            yield from node.prepare(txn, bd)
            yield from self.cluster.transmit(node.node_id, MASTER_ID, CONTROL_BYTES, bd)
        ts = self.cluster.oracle.commit(txn)
        for node in nodes:
            node.apply_commit(txn, ts)
        self.commits += 1
        self.cluster.trace.record(self.env.now, MASTER_ID, "commit",
                                  f"txn={txn.txn_id} ts={ts} nodes={','.join(str(n.node_id) for n in writers)}")
        return ts

    def abort(self, txn: Transaction, reason: str = "") -> None:
        for node_id in sorted(txn.participants):
            self.cluster.node(node_id).apply_abort(txn)
        self.cluster.oracle.abort(txn)
        self.aborts += 1
        self.cluster.trace.record(self.env.now, MASTER_ID, "abort", f"txn={txn.txn_id} {reason}".rstrip())

    def run_transaction(
        self,
        body: Callable[["TxnContext"], Generator],
        bd: Breakdown | None = None,
        mode: TxnMode = TxnMode.READ_WRITE,
        kind: TxnKind = TxnKind.USER,
    ):
        """Run `body(ctx)` as one transaction; returns (committed, body result)."""
        txn = self.cluster.oracle.begin(mode, kind)
        ctx = TxnContext(self, txn, bd)
        try:
            value = yield from body(ctx)
            yield from self.commit(txn, bd)
            return True, value
        except TransactionAborted as e:
            logger.debug(f"Txn {txn.txn_id} aborted: {e}")
            self.abort(txn, type(e).__name__)
            return False, None
        except Exception as e:
            if txn.active:
                logger.warning(f"Txn {txn.txn_id} failed: {type(e).__name__}: {e}")
                self.abort(txn, type(e).__name__)
            raise


class TxnContext:
    """What a transaction body sees: record operations bound to one txn."""

    def __init__(self, master: Master, txn: Transaction, bd: Breakdown | None):
        self.master = master
        self.txn = txn
        self.bd = bd

    def read(self, table_id: int, key: int):
        result = yield from self.master.request(self.txn, RecordOp(OpKind.READ, table_id, key), self.bd)
        return result.value

    def write(self, table_id: int, key: int, payload: bytes):
        yield from self.master.request(self.txn, RecordOp(OpKind.WRITE, table_id, key, payload), self.bd)

    def insert(self, table_id: int, key: int, payload: bytes):
        yield from self.master.request(self.txn, RecordOp(OpKind.INSERT, table_id, key, payload), self.bd)

    def delete(self, table_id: int, key: int):
        yield from self.master.request(self.txn, RecordOp(OpKind.DELETE, table_id, key), self.bd)

    def scan(self, table_id: int, key_range: KeyRange):
        return (yield from self.master.scan(self.txn, table_id, key_range, self.bd))
