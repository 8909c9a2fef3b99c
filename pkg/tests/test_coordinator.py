# elasticdb/tests/test_coordinator.py
"""
Tests for the master side: partition map routing, transactions through
the master, the power model, the controller's decision step and helper
nodes.
"""

import pytest

from elasticdb.bench.tpcc import decode, encode, load_flat_table
from elasticdb.bench.validate import tiny_config
from elasticdb.cluster.monitor import Breakdown, NodeStats, PartitionStats
from elasticdb.cluster.node import PowerState
from elasticdb.cluster.runtime import Cluster
from elasticdb.coordinator.controller import ActionKind, Controller, LoadHint
from elasticdb.coordinator.helpers import HelperPool
from elasticdb.coordinator.master import Master
from elasticdb.coordinator.power import NA, PowerModel, PowerSampler, energy_accounting
from elasticdb.coordinator.router import EntryState, PartitionMap, route, route_range
from elasticdb.core.errors import CorruptionError, DeadlockAbort, NoHelpersAvailable, RoutingError
from elasticdb.core.model import KeyRange

TABLE = 1


# ── partition map ────────────────────────────────────────────

class TestPartitionMap:
    @pytest.fixture
    def pmap(self):
        pmap = PartitionMap()
        pmap.register_table(1, 100)
        pmap.assign(1, KeyRange(50, 100), 2)
        pmap.assign(1, KeyRange(0, 50), 1)
        return pmap

    def test_lookup(self, pmap):
        assert route(pmap, 1, 10) == [1]
        assert route(pmap, 1, 50) == [2]
        assert pmap.check() is None

    def test_unknown_table(self, pmap):
        with pytest.raises(RoutingError):
            pmap.lookup(9, 1)

    def test_uncovered_key_is_corruption(self):
        pmap = PartitionMap()
        pmap.register_table(1, 100)
        pmap.assign(1, KeyRange(0, 50), 1)
        with pytest.raises(CorruptionError):
            pmap.lookup(1, 70)
        assert "gap" in pmap.check()

    def test_dual_pointer_new_owner_first(self, pmap):
        pmap.mark_moving(1, KeyRange(20, 40), 3, 1)
        assert route(pmap, 1, 25) == [3, 1]
        assert route(pmap, 1, 10) == [1]
        assert [e.state for e in pmap.entries(1)] == [
            EntryState.STABLE, EntryState.MOVING, EntryState.STABLE, EntryState.STABLE,
        ]
        assert pmap.check() is None

    def test_complete_move_drops_old_pointer(self, pmap):
        pmap.mark_moving(1, KeyRange(20, 40), 3, 1)
        pmap.complete_move(1, KeyRange(20, 40))
        assert route(pmap, 1, 25) == [3]
        assert pmap.nodes_of(1) == {1, 2, 3}

    def test_abort_move_merges_back(self, pmap):
        pmap.mark_moving(1, KeyRange(20, 40), 3, 1)
        pmap.abort_move(1, KeyRange(20, 40))
        assert len(pmap.entries(1)) == 2
        assert pmap.dump().splitlines()[0] == "table 1 [0,50) -> 1 stable"

    @pytest.mark.parametrize("moving", [KeyRange(0, 50), KeyRange(25, 50), KeyRange(0, 25), KeyRange(0, 100)])
    def test_move_on_entry_boundaries(self, pmap, moving):
        pmap.mark_moving(1, moving, 3, 1)
        assert route(pmap, 1, moving.low) == [3, 1]
        assert pmap.check() is None
        pmap.complete_move(1, moving)
        assert route(pmap, 1, moving.high - 1) == [3]
        assert pmap.check() is None

    def test_abort_after_carved_move(self, pmap):
        pmap.mark_moving(1, KeyRange(20, 40), 3, 1)
        pmap.complete_move(1, KeyRange(20, 40))
        pmap.mark_moving(1, KeyRange(20, 40), 2, 3)
        pmap.abort_move(1, KeyRange(20, 40))
        assert route(pmap, 1, 30) == [3]
        assert pmap.check() is None

    def test_route_range_pieces(self, pmap):
        pieces = route_range(pmap, 1, KeyRange(40, 60))
        assert pieces == [(KeyRange(40, 50), [1]), (KeyRange(50, 60), [2])]


# ── transactions through the master ─────────────────────────

class TestMasterTransactions:
    def test_read_existing_and_missing(self, loaded, txn):
        ok, value = txn(lambda ctx: ctx.read(TABLE, 10))
        assert ok and len(value) == 8
        assert txn(lambda ctx: ctx.read(TABLE, 11)) == (True, None)

    def test_write_then_read(self, loaded, txn):
        def body(ctx):
            yield from ctx.write(TABLE, 10, encode(77))
            yield from ctx.write(TABLE, 11, encode(5))
        assert txn(body)[0]
        assert decode(txn(lambda ctx: ctx.read(TABLE, 10))[1]) == 77
        assert decode(txn(lambda ctx: ctx.read(TABLE, 11))[1]) == 5

    def test_delete(self, loaded, txn):
        assert txn(lambda ctx: ctx.delete(TABLE, 10))[0]
        assert txn(lambda ctx: ctx.read(TABLE, 10)) == (True, None)
        _, rows = txn(lambda ctx: ctx.scan(TABLE, KeyRange(8, 14)))
        assert [k for k, _ in rows] == [8, 12]

    def test_scan_is_sorted(self, loaded, txn):
        _, rows = txn(lambda ctx: ctx.scan(TABLE, KeyRange(0, 20)))
        assert [k for k, _ in rows] == list(range(0, 20, 2))

    def test_aborted_body_leaves_no_trace(self, loaded, master, txn):
        def body(ctx):
            yield from ctx.write(TABLE, 10, encode(1))
            raise DeadlockAbort(ctx.txn.txn_id, "forced")
        before = txn(lambda ctx: ctx.read(TABLE, 10))[1]
        assert txn(body) == (False, None)
        assert txn(lambda ctx: ctx.read(TABLE, 10))[1] == before
        assert master.aborts == 1
        assert not master.cluster.oracle.active

    def test_failing_body_is_aborted_and_reraised(self, loaded, master, txn):
        def body(ctx):
            yield from ctx.write(TABLE, 10, encode(1))
            raise RoutingError("lost key 10")
        before = txn(lambda ctx: ctx.read(TABLE, 10))[1]
        with pytest.raises(RoutingError):
            txn(body)
        assert not master.cluster.oracle.active
        assert master.aborts == 1
        assert txn(lambda ctx: ctx.read(TABLE, 10))[1] == before

    def test_breakdown_collects_network_time(self, loaded, txn):
        bd = Breakdown()
        txn(lambda ctx: ctx.read(TABLE, 10), bd=bd)
        assert bd.network > 0
        assert bd.cpu > 0

    def test_commit_draws_timestamp(self, loaded, master, txn):
        txn(lambda ctx: ctx.write(TABLE, 10, encode(1)))
        assert master.commits == 1
        assert master.cluster.oracle.commit_counter == 1
        assert master.cluster.trace.of_kind("commit")

    def test_read_only_commit_draws_nothing(self, loaded, master, txn):
        txn(lambda ctx: ctx.read(TABLE, 10))
        assert master.cluster.oracle.commit_counter == 0


def _race(master):
    """A writer that holds key 10 for a second, and a later writer of the same key."""
    env = master.env

    def slow(ctx):
        yield from ctx.write(TABLE, 10, encode(1))
        yield env.timeout(1.0)

    def late(ctx):
        yield env.timeout(0.5)
        yield from ctx.write(TABLE, 10, encode(2))

    a = env.process(master.run_transaction(slow))
    b = env.process(master.run_transaction(late))
    env.run(until=env.all_of([a, b]))
    return a.value, b.value


class TestConcurrencyEngines:
    def test_mvcc_first_writer_wins(self, loaded, master, txn):
        first, second = _race(master)
        assert first[0]
        assert second == (False, None)
        assert decode(txn(lambda ctx: ctx.read(TABLE, 10))[1]) == 1

    def test_mgl_later_writer_waits(self, drive):
        cluster = Cluster(tiny_config(cc_engine="mgl"))
        cluster.start([1, 2])
        master = Master(cluster)
        load_flat_table(cluster, master, TABLE, "t", range(0, 400, 2), 1, 32, key_max=400)
        first, second = _race(master)
        assert first[0] and second[0]
        assert cluster.env.now > 1.0
        ok, value = drive(cluster, master.run_transaction(lambda ctx: ctx.read(TABLE, 10)))
        assert decode(value) == 2

    def test_mvcc_reader_keeps_snapshot(self, loaded, master):
        env = master.env
        seen = []

        def reader(ctx):
            seen.append((yield from ctx.read(TABLE, 10)))
            yield env.timeout(1.0)
            seen.append((yield from ctx.read(TABLE, 10)))

        r = env.process(master.run_transaction(reader))
        env.process(master.run_transaction(lambda ctx: ctx.write(TABLE, 10, encode(9))))
        env.run(until=r)
        assert seen[0] == seen[1]


# ── power ────────────────────────────────────────────────────

class TestPower:
    model = PowerModel(22.0, 26.0, 2.5, 20.0)

    def test_linear_active_power(self):
        assert self.model.p_active(0.0) == 22.0
        assert self.model.p_active(0.5) == pytest.approx(24.0)
        assert self.model.p_active(2.0) == 26.0

    def test_cluster_power(self):
        nodes = [(PowerState.ACTIVE, 1.0), (PowerState.STANDBY, 0.0), (PowerState.BOOTING, 0.0)]
        assert self.model.cluster_power(nodes) == pytest.approx(20 + 26 + 2.5 + 22)

    def test_bounds(self):
        assert self.model.bounds(10) == (45.0, 280.0)

    def test_energy_per_query(self):
        total, samples = energy_accounting([(1.0, 50.0), (2.0, 60.0)], [10, 0])
        assert total == pytest.approx(110.0)
        assert samples[0].per_query_j == pytest.approx(5.0)
        assert samples[1].per_query_j is None
        assert samples[1].per_query_text == NA

    def test_unaligned_series(self):
        with pytest.raises(ValueError):
            energy_accounting([(1.0, 50.0)], [])

    def test_sampler(self, cluster, drive):
        sampler = PowerSampler(cluster, 1.0)
        sampler.start()
        drive(cluster, cluster.node(1).work(1.0))
        cluster.env.run(until=1.5)
        (t, watts), = sampler.series
        low, high = sampler.model.bounds(cluster.cfg.node_count)
        assert t == 1.0
        assert low <= watts <= high
        assert sampler.active_counts == [2]


# ── controller ───────────────────────────────────────────────

def _stats(node_id, cpu, partitions=None):
    parts = {pid: PartitionStats(pid, share, 0, 0) for pid, share in (partitions or {}).items()}
    return NodeStats(node_id, (0.0, 1.0), cpu, 0, {0: 0.0}, 0, parts)


class TestController:
    def _run(self, controller, batches):
        actions = []
        for i, batch in enumerate(batches, start=1):
            actions.append(controller.evaluate(float(i), batch))
        return actions

    def test_hint_then_move_to_peer(self, cluster, loaded):
        controller = Controller(cluster, mover=None)
        pid = loaded.partition_id
        batch = [_stats(1, 0.95, {pid: 0.9}), _stats(2, 0.1)]
        steps = self._run(controller, [batch] * 4)
        assert steps[0] == [] and steps[1] == []
        assert [a.kind for a in steps[2]] == [ActionKind.OFFLOAD_HINT]
        move, = steps[3]
        assert move.kind is ActionKind.MOVE
        assert (move.source, move.target, move.partition_id) == (1, 2, pid)
        assert move.log_line() == f"4.000 cpu=0.95 move 1->2 partition={pid}"

    def test_power_on_when_no_peer_has_headroom(self, cluster, loaded):
        controller = Controller(cluster, mover=None)
        pid = loaded.partition_id
        batch = [_stats(1, 0.95, {pid: 0.9}), _stats(2, 0.79)]
        steps = self._run(controller, [batch] * 4)
        kinds = [a.kind for a in steps[3]]
        assert kinds == [ActionKind.POWER_ON, ActionKind.MOVE]
        assert steps[3][0].target == 3

    def test_scale_in_powers_off_empty_node(self, cluster, loaded):
        controller = Controller(cluster, mover=None)
        batch = [_stats(1, 0.1), _stats(2, 0.1)]
        steps = self._run(controller, [batch] * 3)
        off, = steps[2]
        assert off.kind is ActionKind.POWER_OFF
        assert off.target == 2

    def test_scale_in_drains_data_node(self, cluster, loaded):
        controller = Controller(cluster, mover=None)
        batch = [_stats(1, 0.05), _stats(2, 0.2)]
        steps = self._run(controller, [batch] * 3)
        drain, = steps[2]
        assert drain.kind is ActionKind.SCALE_IN
        assert (drain.source, drain.target) == (1, 2)

    def test_moderate_load_is_left_alone(self, cluster, loaded):
        batch = [_stats(1, 0.5, {loaded.partition_id: 0.5}), _stats(2, 0.5)]
        steps = self._run(Controller(cluster, mover=None), [batch] * 100)
        assert all(step == [] for step in steps)

    def test_single_node_never_scaled_in(self, cluster, loaded):
        controller = Controller(cluster, mover=None)
        steps = self._run(controller, [[_stats(1, 0.05)]] * 5)
        assert all(step == [] for step in steps)

    def test_load_schedule_scales_utilization(self, cluster, loaded):
        controller = Controller(cluster, mover=None, schedule=[LoadHint(0.0, 2.0)])
        batch = [_stats(1, 0.45), _stats(2, 0.45)]
        steps = self._run(controller, [batch] * 3)
        assert [a.kind for a in steps[2]] == [ActionKind.OFFLOAD_HINT, ActionKind.OFFLOAD_HINT]

    def test_disabled_controller_ignores_stats(self, cluster, loaded):
        controller = Controller(cluster, mover=None, enabled=False)
        for i in range(5):
            controller.on_stats(float(i), [_stats(1, 0.99), _stats(2, 0.99)])
        assert controller.export_decisions() == ""


# ── helpers ──────────────────────────────────────────────────

class TestHelpers:
    def test_attach_ships_log_and_extends_buffer(self, cluster, loaded, drive, txn):
        pool = HelperPool(cluster)
        chosen = drive(cluster, pool.attach(1))
        assert chosen == [3]
        node = cluster.node(1)
        assert node.wal.shipping_to == 3
        assert node.buffer.remote.helper == 3
        assert cluster.node(3).helper_for == {1}

        bd = Breakdown()
        assert txn(lambda ctx: ctx.write(TABLE, 10, encode(3)), bd=bd)[0]
        assert bd.logging > 0
        assert cluster.network.link(1, 3).messages >= 1

    def test_detach_powers_helpers_off(self, cluster, loaded, drive):
        pool = HelperPool(cluster)
        drive(cluster, pool.attach(1))
        pool.detach()
        assert cluster.node(1).wal.shipping_to is None
        assert cluster.node(1).buffer.remote is None
        assert cluster.node(3).power_state is PowerState.STANDBY
        assert pool.helpers == []

    def test_no_standby_nodes(self, tiny_cfg, drive):
        cluster = Cluster(tiny_cfg)
        cluster.start([1, 2, 3, 4])
        with pytest.raises(NoHelpersAvailable):
            drive(cluster, HelperPool(cluster).attach(1))
