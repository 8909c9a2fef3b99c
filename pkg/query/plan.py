# elasticdb/query/plan.py
"""
Distributed query plans: building, placement and the debug tree.

Plans are generated on the master from the partition map. Placement
keeps pipelining operators on their child's node and moves blocking
operators (Sort, GroupAggregate) to the least CPU-loaded Active node
when the node feeding them is above cpu_upper_threshold. Every new
cross-node edge gets an Exchange with a Buffer on the consumer side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from elasticdb.cluster.monitor import NodeStats
from elasticdb.concurrency.txn import Transaction
from elasticdb.config import ClusterConfig
from elasticdb.coordinator.router import PartitionMap, route_range
from elasticdb.core.model import KeyRange
from elasticdb.query.operators import (
    Buffer,
    Exchange,
    GroupAggregate,
    Operator,
    OperatorKind,
    Project,
    Scan,
    Sort,
    Union,
    sort_cost,
)

logger = logging.getLogger("elasticdb.query.plan")


@dataclass
class QueryPlan:
    root: Operator
    txn: Transaction | None = None
    estimated_blocking_cost: float = 0.0

    def operators(self) -> list[Operator]:
        return list(self.root.walk())

    def nodes(self) -> set[int]:
        return {op.node_id for op in self.root.walk()}


def explain(plan: QueryPlan | Operator) -> str:
    """Indented text tree, one operator per line with its placement."""
    root = plan.root if isinstance(plan, QueryPlan) else plan
    lines: list[str] = []

    def visit(op: Operator, depth: int) -> None:
        lines.append("  " * depth + op.label())
        for c in op.children:
            visit(c, depth + 1)

    visit(root, 0)
    return "\n".join(lines) + "\n"


def scan_table(pmap: PartitionMap, table_id: int, key_range: KeyRange) -> Operator:
    """One Scan per map piece on its current owner (segment pruning by range), unioned."""
    scans: list[Operator] = [Scan(nodes[0], table_id, piece) for piece, nodes in route_range(pmap, table_id, key_range)]
    if len(scans) == 1:
        return scans[0]
    return Union(scans[0].node_id, scans)


def remote_edge(consumer_node: int, child: Operator, buffered: bool, depth: int = 1) -> Operator:
    """Exchange from child's node to consumer_node, optionally behind a Buffer."""
    edge: Operator = Exchange(consumer_node, [child])
    if buffered:
        edge = Buffer(consumer_node, edge, depth)
    return edge


def _source_node(op: Operator) -> int:
    """Node that feeds op's input (where its child runs)."""
    return op.child.node_id if op.children else op.node_id


def plan_placement(
    plan: QueryPlan,
    stats: list[NodeStats] | dict[int, float],
    cfg: ClusterConfig,
    record_estimate: int = 0,
) -> QueryPlan:
    """Place blocking operators away from overloaded nodes; ties keep the plan local."""
    util = stats if isinstance(stats, dict) else {s.node_id: s.cpu_utilization for s in stats}
    if not isinstance(stats, dict):
        for s in stats:
            rate = s.net_bytes / max(s.interval[1] - s.interval[0], 1e-9)
            if rate > cfg.cpu_upper_threshold * cfg.net_bandwidth:
                logger.warning(f"Node {s.node_id} network near saturation ({rate / 1e6:.1f} MB/s)")
    plan.root = _place(plan.root, util, cfg)
    plan.estimated_blocking_cost = sum(
        sort_cost(record_estimate, cfg.cpu_per_sort_unit) for op in plan.root.walk() if op.kind.blocking
    )
    return plan


def _place(op: Operator, util: dict[int, float], cfg: ClusterConfig) -> Operator:
    op.children = [_place(c, util, cfg) for c in op.children]
    if op.kind in (OperatorKind.SCAN, OperatorKind.EXCHANGE, OperatorKind.BUFFER):
        return op
    if not op.kind.blocking:
        op.node_id = _source_node(op)
        return op

    src = _source_node(op)
    load = util.get(src, 0.0)
    if load <= cfg.cpu_upper_threshold:
        op.node_id = src
        return op
    peers = sorted((u, nid) for nid, u in util.items() if nid != src)
    if not peers or peers[0][0] >= load:
        op.node_id = src
        return op
    target = peers[0][1]
    logger.debug(f"Offloading {op.kind.value} from node {src} ({load:.2f}) to node {target} ({peers[0][0]:.2f})")
    op.node_id = target
    op.children = [remote_edge(target, c, buffered=True, depth=cfg.prefetch_depth) for c in op.children]
    return op


def offload_blocking(plan: QueryPlan, target: int, cfg: ClusterConfig) -> QueryPlan:
    """Run every blocking operator on `target` behind a buffered edge, whatever the load."""
    for op in plan.operators():
        if op.kind.blocking and op.node_id != target:
            op.node_id = target
            op.children = [remote_edge(target, c, buffered=True, depth=cfg.prefetch_depth) for c in op.children]
    return plan


def finalize(root: Operator, buffered: bool = True, depth: int = 1) -> Operator:
    """Insert Exchanges on every edge whose ends sit on different nodes."""
    for i, c in enumerate(root.children):
        child = finalize(c, buffered, depth)
        if child.node_id != root.node_id and root.kind not in (OperatorKind.EXCHANGE, OperatorKind.BUFFER):
            child = remote_edge(root.node_id, child, buffered, depth)
        root.children[i] = child
    return root


def build_plan(
    pmap: PartitionMap,
    table_id: int,
    key_range: KeyRange,
    project=None,
    sort_key=None,
    aggregate: str | None = None,
    group=None,
    txn: Transaction | None = None,
) -> QueryPlan:
    """Scan (+ Project) (+ Sort | GroupAggregate) over a key range, all on the scan node."""
    root = scan_table(pmap, table_id, key_range)
    if project is not None:
        root = Project(root.node_id, root, project)
    if sort_key is not None:
        root = Sort(root.node_id, root, sort_key)
    if aggregate is not None:
        root = GroupAggregate(root.node_id, root, aggregate, group)
    return QueryPlan(root, txn)
