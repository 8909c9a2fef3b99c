# elasticdb/tests/test_cluster.py
"""
Tests for the simulated substrate: network links, power states, node
time accounting, monitoring and the event trace.
"""

import pytest
import simpy

from elasticdb.cluster.monitor import Breakdown, Monitor
from elasticdb.cluster.network import Network
from elasticdb.cluster.node import PowerState
from elasticdb.cluster.runtime import MASTER_ID
from elasticdb.cluster.trace import EventTrace
from elasticdb.core.errors import NodeStandbyError, PowerOffRefused


class TestNetwork:
    @pytest.fixture
    def net(self):
        return Network(simpy.Environment(), base_latency=0.001, bandwidth=1000.0)

    def test_transfer_time(self, net):
        assert net.transfer_time(500) == pytest.approx(0.501)

    def test_single_message(self, net):
        env = net.env
        env.run(until=env.process(net.transmit(1, 2, 500)))
        assert env.now == pytest.approx(0.501)
        assert net.total_bytes == 500
        assert net.total_messages == 1

    def test_same_link_serializes(self, net):
        env = net.env
        first = env.process(net.transmit(1, 2, 500))
        second = env.process(net.transmit(1, 2, 500))
        env.run(until=env.all_of([first, second]))
        assert env.now == pytest.approx(1.001)

    def test_links_are_independent(self, net):
        env = net.env
        a = env.process(net.transmit(1, 2, 500))
        b = env.process(net.transmit(2, 1, 500))
        env.run(until=env.all_of([a, b]))
        assert env.now == pytest.approx(0.501)
        assert len(net.links()) == 2


class TestPowerStates:
    def test_start_activates(self, cluster):
        assert [n.node_id for n in cluster.active_nodes()] == [1, 2]
        assert [n.node_id for n in cluster.standby_nodes()] == [3, 4]

    def test_boot_takes_boot_delay(self, cluster):
        cluster.env.run(until=cluster.power_on(3))
        assert cluster.node(3).power_state is PowerState.ACTIVE
        assert cluster.env.now == pytest.approx(cluster.cfg.boot_delay)

    def test_power_on_active_node_is_immediate(self, cluster):
        cluster.env.run(until=cluster.power_on(1))
        assert cluster.env.now == 0

    def test_message_to_standby_refused(self, cluster, drive):
        with pytest.raises(NodeStandbyError):
            drive(cluster, cluster.transmit(1, 3, 10))

    def test_message_to_booting_node_waits(self, cluster, drive):
        cluster.power_on(3)
        drive(cluster, cluster.transmit(MASTER_ID, 3, 0))
        assert cluster.env.now >= cluster.cfg.boot_delay

    def test_power_off_refused_while_hosting_data(self, cluster, loaded):
        with pytest.raises(PowerOffRefused):
            cluster.power_off(1)

    def test_power_off_empty_node(self, cluster):
        cluster.power_off(2)
        assert cluster.node(2).power_state is PowerState.STANDBY
        assert "2 power standby" in cluster.trace.export()


class TestNode:
    def test_work_charges_cpu(self, cluster, drive):
        node, bd = cluster.node(1), Breakdown()
        drive(cluster, node.work(0.5, bd=bd))
        assert node.busy_time == pytest.approx(0.5)
        assert bd.cpu == pytest.approx(0.5)

    def test_cores_run_in_parallel(self, cluster):
        node, env = cluster.node(1), cluster.env
        jobs = [env.process(node.work(1.0)) for _ in range(cluster.cfg.cpu_cores + 1)]
        env.run(until=env.all_of(jobs))
        assert env.now == pytest.approx(2.0)

    def test_work_on_standby_refused(self, cluster, drive):
        with pytest.raises(NodeStandbyError):
            drive(cluster, cluster.node(3).work(0.1))

    def test_disk_io_time(self, cluster, drive):
        bd = Breakdown()
        drive(cluster, cluster.node(1).disk_io(0, reads=2, bd=bd))
        op = cluster.node(1).disks[0].op_time
        assert cluster.env.now == pytest.approx(2 * op)
        assert bd.disk_io == pytest.approx(2 * op)

    def test_report_stats_utilization(self, cluster, drive):
        node = cluster.node(1)
        drive(cluster, node.work(0.5))
        stats = node.report_stats(1.0)
        assert stats.cpu_utilization == pytest.approx(0.5 / cluster.cfg.cpu_cores)
        assert node.report_stats(1.0).cpu_utilization == 0

    def test_partition_counters_reported(self, cluster, loaded, drive):
        node = cluster.node(1)
        drive(cluster, node.work(0.2, partition=loaded))
        stats = node.report_stats(1.0)
        assert stats.partitions[loaded.partition_id].cpu_cycles > 0

    def test_owner_lookup(self, cluster, loaded):
        assert cluster.owner_of(1, 10) == 1
        assert cluster.partitions(1) == [loaded]
        assert cluster.node(1).hosts_data()


class TestMonitor:
    def test_reports_every_interval(self, cluster):
        monitor = Monitor(cluster, 1.0)
        seen = []
        monitor.subscribe(lambda now, batch: seen.append((now, [s.node_id for s in batch])))
        monitor.start()
        cluster.env.run(until=2.5)
        assert seen == [(1.0, [1, 2]), (2.0, [1, 2])]

    def test_breakdown(self):
        a, b = Breakdown(cpu=1.0), Breakdown(network=0.5)
        a.merge(b)
        a.add("locking", 0.25)
        assert a.total == pytest.approx(1.75)
        assert a.as_dict()["network"] == 0.5


class TestTrace:
    def test_record_and_filter(self, tmp_path):
        trace = EventTrace()
        trace.record(1.5, 2, "move", "plan=1")
        trace.record(2.0, 0, "commit")
        assert trace.of_kind("move") == ["1.500000 2 move plan=1"]
        path = tmp_path / "trace.log"
        trace.export(path)
        assert path.read_text() == "1.500000 2 move plan=1\n2.000000 0 commit\n"

    def test_disabled_records_nothing(self):
        trace = EventTrace(enabled=False)
        trace.record(1.0, 1, "power", "active")
        assert trace.lines == []
