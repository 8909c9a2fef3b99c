# elasticdb/tests/test_query.py
"""
Tests for the operator tree: scans, pipelining and blocking operators,
Exchange round trips in classic vs vectorized mode, placement of
blocking operators and the explain output.
"""

import pytest

from elasticdb.cluster.messages import CONTROL_BYTES
from elasticdb.cluster.monitor import NodeStats
from elasticdb.concurrency.txn import TxnMode
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import Scheme
from elasticdb.partitioning.mover import Mover
from elasticdb.query.executor import execute
from elasticdb.query.operators import (
    Buffer,
    ExecContext,
    Exchange,
    Filter,
    GroupAggregate,
    OperatorKind,
    Project,
    Scan,
    payload_int,
    payload_prefix,
)
from elasticdb.query.plan import QueryPlan, build_plan, explain, offload_blocking, plan_placement

TABLE = 1
ALL = KeyRange(0, 400)


@pytest.fixture
def run(cluster, master, drive):
    def _run(plan, **kwargs):
        return drive(cluster, execute(cluster, plan, master, **kwargs))
    return _run


class TestScans:
    def test_full_scan(self, master, loaded, run):
        result = run(build_plan(master.pmap, TABLE, ALL))
        assert [k for k, _ in result.rows] == list(range(0, 400, 2))
        assert result.elapsed > 0
        assert result.throughput == pytest.approx(200 / result.elapsed)

    def test_range_scan(self, master, loaded, run):
        result = run(build_plan(master.pmap, TABLE, KeyRange(100, 110)))
        assert [k for k, _ in result.rows] == [100, 102, 104, 106, 108]

    def test_filter(self, loaded, run):
        plan = QueryPlan(Filter(1, Scan(1, TABLE, ALL), KeyRange(10, 20)))
        assert [k for k, _ in run(plan).rows] == [10, 12, 14, 16, 18]

    def test_union_after_move(self, cluster, master, loaded, run):
        cluster.env.run(until=Mover(cluster, master).move(Scheme.PHYSIOLOGICAL, loaded, 2))
        plan = build_plan(master.pmap, TABLE, ALL)
        assert plan.root.kind is OperatorKind.UNION
        result = run(plan)
        assert [k for k, _ in result.rows] == list(range(0, 400, 2))
        assert result.round_trips > 0

    def test_scan_releases_its_transaction(self, cluster, master, loaded, run):
        run(build_plan(master.pmap, TABLE, ALL))
        assert not cluster.oracle.active

    def test_failing_operator_releases_its_transaction(self, cluster, master, loaded, run):
        def bad_key(row):
            raise ValueError(f"unsortable row {row[0]}")
        with pytest.raises(ValueError):
            run(build_plan(master.pmap, TABLE, ALL, sort_key=bad_key))
        assert not cluster.oracle.active


class TestOperators:
    def test_project_prefix(self, master, loaded, run):
        plan = build_plan(master.pmap, TABLE, ALL, project=payload_prefix(2))
        assert all(len(payload) == 2 for _, payload in run(plan).rows)

    def test_sort_by_value(self, master, loaded, run):
        rows = run(build_plan(master.pmap, TABLE, ALL, sort_key=payload_int)).rows
        values = [payload_int(r) for r in rows]
        assert values == sorted(values)
        assert len(rows) == 200

    def test_group_count(self, master, loaded, run):
        plan = build_plan(master.pmap, TABLE, ALL, aggregate="count", group=lambda row: row[0] // 100)
        assert run(plan).rows == [(0, 50), (1, 50), (2, 50), (3, 50)]

    def test_unknown_aggregate(self):
        with pytest.raises(ValueError):
            GroupAggregate(1, Scan(1, TABLE, ALL), "median")

    def test_blocking_kinds(self):
        assert OperatorKind.SORT.blocking
        assert not OperatorKind.PROJECT.blocking


class TestExchange:
    def _remote_project(self):
        return QueryPlan(Project(2, Scan(1, TABLE, ALL), payload_prefix(8)))

    def test_classic_pays_one_round_trip_per_record(self, cluster, loaded, run):
        result = run(self._remote_project(), vectorized=False, buffered_edges=False)
        assert result.round_trips == 201
        assert result.bytes_shipped == 201 * CONTROL_BYTES + 200 * cluster.cfg.record_size

    def test_vectorized_batches_round_trips(self, loaded, run):
        result = run(self._remote_project(), vector_size=64, buffered_edges=False)
        assert result.round_trips == 5
        assert len(result.rows) == 200

    def test_vectorized_is_faster(self, cluster, master, loaded, drive):
        classic = drive(cluster, execute(cluster, self._remote_project(), master, vectorized=False))
        vectorized = drive(cluster, execute(cluster, self._remote_project(), master, vector_size=64))
        assert classic.rows == vectorized.rows
        assert vectorized.elapsed < classic.elapsed
        assert classic.breakdown.network > vectorized.breakdown.network

    def test_close_stops_prefetch(self, cluster, master, loaded, drive):
        buffer = Buffer(2, Exchange(2, [Scan(1, TABLE, ALL)]), depth=1)
        ctx = ExecContext(cluster, cluster.oracle.begin(TxnMode.READ_ONLY), master, vector_size=16)

        def first_vector():
            yield from buffer.open(ctx)
            return (yield from buffer.next_vector(ctx))

        batch = drive(cluster, first_vector())
        assert [k for k, _ in batch] == list(range(0, 32, 2))
        buffer.close(ctx)
        cluster.env.run(until=cluster.env.now + 0.01)
        assert not buffer._proc.is_alive
        assert ctx.round_trips <= 3


class TestPlacement:
    def test_explain(self, master, loaded):
        plan = build_plan(master.pmap, TABLE, ALL, sort_key=payload_int)
        assert explain(plan) == "Sort [node 1]\n  Scan table=1 [0,400) [node 1]\n"

    def test_sort_offloaded_from_busy_node(self, cluster, master, loaded):
        plan = build_plan(master.pmap, TABLE, ALL, sort_key=payload_int)
        plan_placement(plan, {1: 0.95, 2: 0.1}, cluster.cfg)
        assert explain(plan).splitlines() == [
            "Sort [node 2]",
            "  Buffer [node 2]",
            "    Exchange [node 1 -> 2]",
            "      Scan table=1 [0,400) [node 1]",
        ]
        assert plan.nodes() == {1, 2}

    def test_measured_stats_drive_placement(self, cluster, master, loaded):
        stats = [NodeStats(1, (0.0, 1.0), 0.95, 0, {0: 0.0}, 0), NodeStats(2, (0.0, 1.0), 0.1, 0, {0: 0.0}, 0)]
        plan = plan_placement(build_plan(master.pmap, TABLE, ALL, sort_key=payload_int), stats, cluster.cfg)
        assert plan.root.node_id == 2
        assert plan.nodes() == {1, 2}

    def test_forced_offload(self, cluster, master, loaded):
        plan = offload_blocking(build_plan(master.pmap, TABLE, ALL, sort_key=payload_int), 2, cluster.cfg)
        assert explain(plan).splitlines() == [
            "Sort [node 2]",
            "  Buffer [node 2]",
            "    Exchange [node 1 -> 2]",
            "      Scan table=1 [0,400) [node 1]",
        ]

    @pytest.mark.parametrize("util", [{1: 0.5, 2: 0.1}, {1: 0.9, 2: 0.95}])
    def test_sort_stays_local(self, cluster, master, loaded, util):
        plan = build_plan(master.pmap, TABLE, ALL, sort_key=payload_int)
        plan_placement(plan, util, cluster.cfg)
        assert plan.nodes() == {1}

    def test_offloaded_plan_gives_same_rows(self, cluster, master, loaded, run):
        local = run(build_plan(master.pmap, TABLE, ALL, sort_key=payload_int))
        plan = plan_placement(build_plan(master.pmap, TABLE, ALL, sort_key=payload_int),
                              {1: 0.95, 2: 0.1}, cluster.cfg)
        offloaded = run(plan)
        assert offloaded.rows == local.rows
        assert offloaded.round_trips > 0
        assert local.round_trips == 0
