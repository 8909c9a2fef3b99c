# elasticdb/cluster/runtime.py
"""
Cluster: the simulated substrate every other layer runs on.

What it does:
  - Owns the simpy clock, the data nodes (ids 1..node_count), the
    point-to-point network, the timestamp oracle, the event trace and
    the monitor.
  - Carries messages between nodes, refusing Standby destinations and
    holding messages to Booting nodes until boot completes.
  - Implements the cross-node page paths the nodes need: remote page
    reads/writes (physical scheme), remote-buffer fetches and spills,
    and log shipping to helpers.

The master is network endpoint 0. It is not a data node and its CPU is
not modelled; it only appears as the far end of request messages.
"""

from __future__ import annotations

import itertools
import logging

import simpy

from elasticdb.cluster.messages import CONTROL_BYTES
from elasticdb.cluster.monitor import Breakdown, Monitor
from elasticdb.cluster.network import Network
from elasticdb.cluster.node import NodeHandle, PowerState
from elasticdb.cluster.trace import EventTrace
from elasticdb.concurrency.txn import TimestampOracle
from elasticdb.config import ClusterConfig
from elasticdb.core.errors import HelperInactiveError, NodeStandbyError
from elasticdb.core.model import TableSpec
from elasticdb.storage.partition import Partition

logger = logging.getLogger("elasticdb.cluster.runtime")

MASTER_ID = 0


class Cluster:
    def __init__(self, cfg: ClusterConfig, env: simpy.Environment | None = None, trace: bool = True):
        self.cfg = cfg
        self.env = env or simpy.Environment()
        self.network = Network(self.env, cfg.net_base_latency, cfg.net_bandwidth)
        self.oracle = TimestampOracle()
        self.trace = EventTrace(enabled=trace)
        self.nodes: dict[int, NodeHandle] = {
            nid: NodeHandle(nid, self, cfg) for nid in range(1, cfg.node_count + 1)
        }
        self.tables: dict[int, TableSpec] = {}
        self.monitor = Monitor(self, cfg.monitor_interval)
        self._segment_ids = itertools.count(1)
        self._partition_ids = itertools.count(1)

    # ── ids / catalog ────────────────────────────────────────

    def new_segment_id(self) -> int:
        return next(self._segment_ids)

    def new_partition_id(self) -> int:
        return next(self._partition_ids)

    def node(self, node_id: int) -> NodeHandle:
        return self.nodes[node_id]

    def new_partition(self, table: TableSpec, owner: int, key_range, disk_id: int = 0) -> Partition:
        part = Partition(self.new_partition_id(), table, owner, key_range, self.new_segment_id,
                         self.cfg.pages_per_segment, self.cfg.page_size, home=(owner, disk_id))
        self.nodes[owner].partitions[part.partition_id] = part
        return part

    # ── power states ─────────────────────────────────────────

    def active_nodes(self) -> list[NodeHandle]:
        return [n for n in self.nodes.values() if n.power_state is PowerState.ACTIVE]

    def standby_nodes(self) -> list[NodeHandle]:
        return [n for n in self.nodes.values() if n.power_state is PowerState.STANDBY]

    def start(self, node_ids) -> None:
        """Initial layout: the given nodes are Active at t=0 without a boot delay."""
        for nid in node_ids:
            self.nodes[nid].activate()
            self.trace.record(self.env.now, nid, "power", "active")

    def power_on(self, node_id: int) -> simpy.Process:
        """Boot a Standby node; the returned process ends when it is usable."""
        node = self.nodes[node_id]
        if node.power_state is not PowerState.STANDBY:
            return self.env.process(self._already_on(node))
        self.trace.record(self.env.now, node_id, "power", "booting")
        logger.info(f"Powering on node {node_id} (boot {self.cfg.boot_delay}s)")
        return self.env.process(self._boot(node))

    def _already_on(self, node: NodeHandle):
        if not node.ready.triggered:
            yield node.ready

    def _boot(self, node: NodeHandle):
        yield from node.boot(self.cfg.boot_delay)
        self.trace.record(self.env.now, node.node_id, "power", "active")

    def power_off(self, node_id: int) -> None:
        """Switch a node to Standby; raises PowerOffRefused while it still matters."""
        self.nodes[node_id].standby()
        self.trace.record(self.env.now, node_id, "power", "standby")
        logger.info(f"Node {node_id} switched to standby")

    # ── messaging ────────────────────────────────────────────

    def transmit(self, src: int, dst: int, size: int, bd: Breakdown | None = None, category: str = "network"):
        """Send `size` bytes src -> dst and wait until they arrive."""
        start = self.env.now
        for end in (src, dst):
            if end == MASTER_ID:
                continue
            node = self.nodes[end]
            if node.power_state is PowerState.STANDBY:
                raise NodeStandbyError(f"node {end} is in standby")
            if node.power_state is PowerState.BOOTING:
                yield node.ready
        yield from self.network.transmit(src, dst, size)
        if src != MASTER_ID:
            self.nodes[src].net_bytes_sent += size
        if bd is not None:
            bd.add(category, self.env.now - start)

    def remote_page_io(self, owner: NodeHandle, home: tuple[int, int], write: bool,
                       bd: Breakdown | None = None, partition: Partition | None = None):
        """Read (or write back) one page that lives on another node's disk."""
        page = self.cfg.page_size
        holder = self.nodes[home[0]]
        yield from owner.work(2 * self.cfg.cpu_per_message + page * self.cfg.cpu_per_byte, partition, bd)
        if write:
            yield from self.transmit(owner.node_id, holder.node_id, CONTROL_BYTES + page, bd)
            yield from holder.disk_io(home[1], writes=1, bd=bd)
            yield from self.transmit(holder.node_id, owner.node_id, CONTROL_BYTES, bd)
        else:
            yield from self.transmit(owner.node_id, holder.node_id, CONTROL_BYTES, bd)
            yield from holder.disk_io(home[1], reads=1, bd=bd)
            yield from self.transmit(holder.node_id, owner.node_id, CONTROL_BYTES + page, bd)
        if partition is not None:
            partition.counters.net_io += 2 * CONTROL_BYTES + page

    def remote_buffer_fetch(self, owner: NodeHandle, bd: Breakdown | None = None):
        """Fetch a spilled page back from the helper holding the buffer extension."""
        remote = owner.buffer.remote
        if remote is None:
            raise HelperInactiveError(f"node {owner.node_id} has no remote buffer")
        yield from owner.work(self.cfg.cpu_per_message, bd=bd)
        try:
            yield from self.transmit(owner.node_id, remote.helper, CONTROL_BYTES, bd)
            yield self.env.timeout(self.cfg.remote_buffer_latency)
            yield from self.transmit(remote.helper, owner.node_id, CONTROL_BYTES + self.cfg.page_size, bd)
        except NodeStandbyError as e:
            raise HelperInactiveError(f"remote buffer of node {owner.node_id} went away") from e

    def spill_pages(self, owner: NodeHandle, helper: int, pages: int):
        """Background push of evicted pages into the helper's memory."""
        try:
            yield from self.transmit(owner.node_id, helper, pages * self.cfg.page_size)
        except NodeStandbyError:
            logger.debug(f"Spill from node {owner.node_id} dropped, helper {helper} is down")

    def ship_log(self, owner: NodeHandle, helper: int, nbytes: int, bd: Breakdown | None = None):
        """Log flush by shipping to a helper: send, helper appends in memory, ack."""
        helper_node = self.nodes[helper]
        if not helper_node.is_active:
            raise HelperInactiveError(f"log helper {helper} is not active")
        try:
            yield from self.transmit(owner.node_id, helper, CONTROL_BYTES + nbytes, bd, category="logging")
            self.env.process(self._log_append(helper_node))
            yield from self.transmit(helper, owner.node_id, CONTROL_BYTES, bd, category="logging")
        except NodeStandbyError as e:
            raise HelperInactiveError(f"log helper {helper} went away") from e

    def _log_append(self, helper_node: NodeHandle):
        try:
            yield from helper_node.work(self.cfg.cpu_per_message)
        except NodeStandbyError:
            logger.debug(f"Log append on helper {helper_node.node_id} dropped, helper is down")

    # ── helpers for inspection ───────────────────────────────

    def owner_of(self, table_id: int, key: int) -> int | None:
        """Node whose partition covers the key right now, ignoring forwarding."""
        for node in self.nodes.values():
            if node.partition_for(table_id, key) is not None:
                return node.node_id
        return None

    def partitions(self, table_id: int | None = None) -> list[Partition]:
        parts = [p for n in self.nodes.values() for p in n.partitions.values()
                 if table_id is None or p.table.table_id == table_id]
        return sorted(parts, key=lambda p: (p.table.table_id, p.key_range.low))

    def run(self, until: float | None = None) -> None:
        self.env.run(until=until)
