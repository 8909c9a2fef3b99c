# elasticdb/query/executor.py
"""Runs a placed plan to completion and reports where the time went."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from elasticdb.cluster.monitor import Breakdown
from elasticdb.concurrency.txn import TxnMode, TxnStatus
from elasticdb.core.errors import TransactionAborted
from elasticdb.query.operators import ExecContext
from elasticdb.query.plan import QueryPlan, finalize

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master

logger = logging.getLogger("elasticdb.query.executor")


@dataclass
class QueryResult:
    rows: list[tuple] = field(default_factory=list)
    breakdown: Breakdown = field(default_factory=Breakdown)
    started_at: float = 0.0
    finished_at: float = 0.0
    round_trips: int = 0
    bytes_shipped: int = 0

    @property
    def elapsed(self) -> float:
        return self.finished_at - self.started_at

    @property
    def throughput(self) -> float:
        """Records per simulated second."""
        return len(self.rows) / self.elapsed if self.elapsed > 0 else 0.0


def execute(
    cluster: "Cluster",
    plan: QueryPlan,
    master: "Master | None" = None,
    vectorized: bool = True,
    vector_size: int | None = None,
    buffered_edges: bool = True,
):
    """Open the plan, pull vectors off the root until exhausted, release the txn.

    The plan runs inside plan.txn, or a read-only transaction of its own.
    An abort discards the partial rows and re-raises.
    """
    env = cluster.env
    own_txn = plan.txn is None
    txn = plan.txn or cluster.oracle.begin(TxnMode.READ_ONLY)
    ctx = ExecContext(cluster, txn, master, vectorized, vector_size or cluster.cfg.vector_size)
    result = QueryResult(started_at=env.now)
    plan.root = finalize(plan.root, buffered_edges, cluster.cfg.prefetch_depth)
    try:
        yield from plan.root.open(ctx)
        while True:
            batch = yield from plan.root.next_vector(ctx)
            if batch is None:
                break
            result.rows.extend(batch)
    except Exception as e:
        if isinstance(e, TransactionAborted):
            logger.debug(f"Query in txn {txn.txn_id} aborted: {e}")
        else:
            logger.warning(f"Query in txn {txn.txn_id} failed: {type(e).__name__}: {e}")
        if own_txn and txn.active:
            for nid in sorted(txn.participants):
                cluster.node(nid).apply_abort(txn)
            cluster.oracle.abort(txn)
        raise
    finally:
        plan.root.close(ctx)
    if own_txn:
        for nid in sorted(txn.participants):
            cluster.node(nid).apply_commit(txn, 0)
        cluster.oracle.finish(txn, TxnStatus.COMMITTED)
    result.finished_at = env.now
    result.breakdown = ctx.bd
    result.round_trips = ctx.round_trips
    result.bytes_shipped = ctx.bytes_shipped
    return result
