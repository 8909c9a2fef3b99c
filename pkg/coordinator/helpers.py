# elasticdb/coordinator/helpers.py
"""
Helper nodes: Standby nodes powered up to assist busy data nodes during
rebalancing. A helper takes over log shipping (the served node's log
flushes go to the helper's memory instead of the local log disk) and
extends the served node's buffer pool with remote memory. Helpers never
own partitions.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from elasticdb.core.errors import NoHelpersAvailable, PowerOffRefused

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.coordinator.helpers")


class HelperPool:
    def __init__(self, cluster: "Cluster"):
        self.cluster = cluster
        self.assignments: dict[int, list[int]] = {}

    @property
    def helpers(self) -> list[int]:
        return sorted(self.assignments)

    def attach(self, count: int, served: list[int] | None = None):
        """Boot `count` Standby nodes and spread the served data nodes over them.

        `served` defaults to every Active node that owns partitions.
        Returns the helper ids once they are usable.
        """
        cluster = self.cluster
        standby = sorted(n.node_id for n in cluster.standby_nodes())
        if count <= 0 or not standby:
            raise NoHelpersAvailable(f"asked for {count} helpers, {len(standby)} standby nodes free")
        if served is None:
            served = sorted(n.node_id for n in cluster.active_nodes() if n.partitions)
        chosen = standby[:count]
        if len(chosen) < count:
            logger.warning(f"Only {len(chosen)} of {count} helpers available")
        boots = [cluster.power_on(nid) for nid in chosen]
        yield cluster.env.all_of(boots)

        for i, node_id in enumerate(served):
            helper_id = chosen[i % len(chosen)]
            node, helper = cluster.node(node_id), cluster.node(helper_id)
            node.wal.ship_to(helper_id)
            node.buffer.extend_remote(helper_id, cluster.cfg.buffer_pages)
            helper.helper_for.add(node_id)
            self.assignments.setdefault(helper_id, []).append(node_id)
            cluster.trace.record(cluster.env.now, helper_id, "helper", f"attach serves={node_id}")
        for helper_id in chosen:
            self.assignments.setdefault(helper_id, [])
        logger.info(f"Attached helpers {chosen} for nodes {served}")
        return chosen

    def detach(self) -> None:
        """Hand log and buffer roles back, then switch the helpers off."""
        cluster = self.cluster
        for helper_id in self.helpers:
            helper = cluster.node(helper_id)
            for node_id in self.assignments.pop(helper_id):
                node = cluster.node(node_id)
                if node.wal.shipping_to == helper_id:
                    node.wal.ship_to(None)
                if node.buffer.remote is not None and node.buffer.remote.helper == helper_id:
                    node.buffer.detach_remote()
                helper.helper_for.discard(node_id)
                cluster.trace.record(cluster.env.now, helper_id, "helper", f"detach serves={node_id}")
            try:
                cluster.power_off(helper_id)
            except PowerOffRefused as e:
                logger.warning(f"Helper {helper_id} stays on: {e}")
        logger.info("Helpers detached")
