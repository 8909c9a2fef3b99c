# elasticdb/tests/test_partitioning.py
"""
Tests for repartitioning: the three move schemes end to end, splitting,
segment pruning and the move audit log.

Every scheme must conserve the committed records and leave a covering
partition map; only the ownership outcome differs between them.
"""

import pytest

from elasticdb.bench.clients import ClientPool, ReadUpdateWorkload
from elasticdb.bench.tpcc import decode, encode
from elasticdb.bench.validate import committed_records
from elasticdb.cluster.monitor import NodeStats, PartitionStats
from elasticdb.concurrency.txn import TxnMode
from elasticdb.coordinator.controller import ActionKind, Controller
from elasticdb.core.errors import MoveAborted, NodeStandbyError, SplitRefused
from elasticdb.core.model import KeyRange
from elasticdb.partitioning.audit import MoveAudit, MoveState, Scheme, estimate_move_cost
from elasticdb.partitioning.mover import Mover
from elasticdb.partitioning.split import segment_pruning, split_key, split_partition

TABLE = 1


@pytest.fixture
def mover(cluster, master):
    return Mover(cluster, master)


def run_move(cluster, mover, scheme, part, target=2, **kwargs):
    return cluster.env.run(until=mover.move(scheme, part, target, **kwargs))


def value_total(cluster):
    return sum(decode(payload) * n for (_, _, payload), n in committed_records(cluster).items())


class TestSchemes:
    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_conserves_records(self, cluster, master, loaded, mover, scheme):
        before = committed_records(cluster)
        plan = run_move(cluster, mover, scheme, loaded)
        assert plan.state is MoveState.DONE
        assert committed_records(cluster) == before
        assert master.pmap.check() is None

    def test_physical_keeps_owner(self, cluster, master, loaded, mover):
        plan = run_move(cluster, mover, Scheme.PHYSICAL, loaded)
        assert cluster.owner_of(TABLE, 300) == 1
        assert master.pmap.lookup(TABLE, 300).current == 1
        moved = [s for s in loaded.segments if s.key_range.low >= 200]
        assert moved and all(s.home[0] == 2 for s in moved)
        assert len(plan.segments) == len(moved)

    @pytest.mark.parametrize("scheme", [Scheme.LOGICAL, Scheme.PHYSIOLOGICAL])
    def test_ownership_moves(self, cluster, master, loaded, mover, scheme):
        run_move(cluster, mover, scheme, loaded)
        assert cluster.owner_of(TABLE, 100) == 1
        assert cluster.owner_of(TABLE, 300) == 2
        assert master.pmap.lookup(TABLE, 300).nodes() == [2]
        assert cluster.node(1).forwards == []

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_reads_after_move(self, cluster, loaded, mover, txn, scheme):
        before = txn(lambda ctx: ctx.read(TABLE, 300))[1]
        run_move(cluster, mover, scheme, loaded)
        assert txn(lambda ctx: ctx.read(TABLE, 300))[1] == before
        _, rows = txn(lambda ctx: ctx.scan(TABLE, KeyRange(0, 400)))
        assert [k for k, _ in rows] == list(range(0, 400, 2))

    def test_physiological_step_order(self, cluster, loaded, mover):
        plan = run_move(cluster, mover, Scheme.PHYSIOLOGICAL, loaded, from_key=384)
        assert mover.audit.steps_of(plan.plan_id) == [
            "start", "mark", "lock", "copy", "attach", "master", "drained", "done",
        ]

    def test_physiological_copies_segments_only(self, cluster, loaded, mover):
        plan = run_move(cluster, mover, Scheme.PHYSIOLOGICAL, loaded)
        assert plan.bytes_moved == len(plan.segments) * cluster.cfg.segment_size
        assert plan.records_moved == 100

    def test_logical_moves_in_batches(self, cluster, loaded, mover):
        plan = run_move(cluster, mover, Scheme.LOGICAL, loaded)
        batches = [s for s in mover.audit.steps_of(plan.plan_id) if s == "batch"]
        assert len(batches) >= 100 // cluster.cfg.logical_batch_size

    def test_write_during_physiological_move(self, cluster, master, loaded, mover, txn):
        env = cluster.env
        move = mover.move(Scheme.PHYSIOLOGICAL, loaded, 2)

        def writer():
            yield env.timeout(1e-4)
            return (yield from master.run_transaction(lambda ctx: ctx.write(TABLE, 300, encode(5))))

        w = env.process(writer())
        env.run(until=env.all_of([move, w]))
        ok, _ = w.value
        if ok:
            assert decode(txn(lambda ctx: ctx.read(TABLE, 300))[1]) == 5
        assert master.pmap.check() is None

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_clients_keep_running_through_move(self, cluster, master, loaded, mover, scheme):
        env = cluster.env
        before = value_total(cluster)
        pool = ClientPool(cluster, master, ReadUpdateWorkload(TABLE, 400, 0.5), clients=6, think_time=0.002)
        pool.start()
        env.run(until=0.05)
        plan = env.run(until=mover.move(scheme, loaded, 2))
        pool.stop()
        env.run(until=env.now + 1.0)
        assert plan.state is MoveState.DONE
        assert pool.in_flight == 0
        updates = sum(1 for c in pool.completions if c.committed and c.name == "update")
        assert updates > 0
        assert value_total(cluster) == before + updates
        assert master.pmap.check() is None

    def test_whole_partition_drains_node(self, cluster, loaded, mover):
        run_move(cluster, mover, Scheme.PHYSIOLOGICAL, loaded, from_key=0)
        assert not cluster.node(1).hosts_data()
        cluster.power_off(1)

    def test_target_must_be_active(self, cluster, loaded, mover):
        with pytest.raises(NodeStandbyError):
            run_move(cluster, mover, Scheme.LOGICAL, loaded, target=3)

    def test_unknown_scheme(self, loaded, mover):
        with pytest.raises(ValueError):
            mover.move("teleport", loaded, 2)


class TestControllerDrivenMove:
    def test_overload_moves_half_the_hot_partition(self, cluster, loaded, mover):
        controller = Controller(cluster, mover, Scheme.PHYSIOLOGICAL)
        pid = loaded.partition_id
        batch = [
            NodeStats(1, (0.0, 1.0), 0.95, 0, {0: 0.0}, 0, {pid: PartitionStats(pid, 0.9, 0, 0)}),
            NodeStats(2, (0.0, 1.0), 0.1, 0, {0: 0.0}, 0),
        ]
        for i in range(1, 5):
            controller.on_stats(float(i), batch)
        cluster.env.run()
        assert [a.kind for a in controller.actions] == [ActionKind.OFFLOAD_HINT, ActionKind.MOVE]
        assert cluster.owner_of(TABLE, 300) == 2
        assert not controller.state.in_flight
        assert len(controller.export_decisions().splitlines()) == 2


class TestSplit:
    def test_split_key_halves_keys(self, loaded):
        assert split_key(loaded, 0.5) == 200

    def test_split_partition_stays_on_owner(self, cluster, master, loaded):
        left, right = split_partition(cluster, loaded, 200)
        assert left.key_range == KeyRange(0, 200)
        assert right.key_range == KeyRange(200, 400)
        assert right.partition_id in cluster.node(1).partitions
        assert master.pmap.check() is None
        assert sum(p.record_count() for p in cluster.partitions(TABLE)) == 200

    def test_aligned_split(self, cluster, loaded):
        with pytest.raises(SplitRefused):
            split_partition(cluster, loaded, 200, aligned=True)
        _, right = split_partition(cluster, loaded, 256, aligned=True)
        assert right.segments[0].key_range.low == 256

    def test_segment_pruning(self, loaded):
        (part, segs), = segment_pruning([loaded], KeyRange(130, 140))
        assert part is loaded
        assert [s.key_range for s in segs] == [KeyRange(128, 256)]
        assert len(segment_pruning([loaded], KeyRange(0, 400))[0][1]) == 4

    def test_range_read_touches_pruned_segments_only(self, cluster, loaded, drive):
        (_, (seg,)), = segment_pruning([loaded], KeyRange(130, 140))
        txn = cluster.oracle.begin(TxnMode.READ_ONLY)
        rows, unserved, pages, served = drive(cluster, cluster.node(1).collect_range(txn, TABLE, KeyRange(130, 140)))
        assert [k for k, _ in rows] == [130, 132, 134, 136, 138]
        assert served == 5
        assert unserved == []
        assert {page.segment_id for page, _, _ in pages} == {seg.segment_id}


class TestAudit:
    def test_one_move_per_partition(self):
        audit = MoveAudit()
        plan = audit.new_plan(Scheme.LOGICAL, 1, 5, 1, 2, KeyRange(0, 10))
        with pytest.raises(MoveAborted):
            audit.new_plan(Scheme.PHYSICAL, 1, 5, 1, 3, KeyRange(0, 10))
        audit.release(plan)
        assert audit.new_plan(Scheme.PHYSICAL, 1, 5, 1, 3, KeyRange(0, 10)).plan_id == 2

    def test_export_format(self, tmp_path):
        audit = MoveAudit()
        plan = audit.new_plan(Scheme.PHYSIOLOGICAL, 1, 5, 1, 2, KeyRange(0, 10))
        audit.step(1.5, plan, "copy", 4096)
        path = tmp_path / "moves.log"
        audit.export(path)
        assert path.read_text() == "1.500000 1 copy 4096\n"
        assert audit.steps_of(1) == ["copy"]

    def test_estimate_uses_slower_rate(self):
        assert estimate_move_cost(1000, 100.0, 0.01, 10) == pytest.approx(10.0)
        assert estimate_move_cost(1000, 1e6, 0.01, 10) == pytest.approx(1.0)

    def test_scheme_ownership_flag(self):
        assert not Scheme.PHYSICAL.transfers_ownership
        assert Scheme.LOGICAL.transfers_ownership
