# elasticdb/partitioning/mover.py
"""
Mover: entry point for every repartitioning request.

Picks the key where the moved share begins, then dispatches to the
scheme's protocol as a simpy process. The audit log and the list of
plans live here so experiments and tests can read them back.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import simpy

from elasticdb.cluster.monitor import Breakdown
from elasticdb.partitioning.audit import MoveAudit, Scheme, estimate_move_cost
from elasticdb.partitioning.logical import move_logical
from elasticdb.partitioning.physical import move_physical
from elasticdb.partitioning.physiological import move_physiological
from elasticdb.partitioning.split import split_key
from elasticdb.storage.partition import Partition

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master

logger = logging.getLogger("elasticdb.partitioning.mover")


class Mover:
    def __init__(self, cluster: "Cluster", master: "Master", audit: MoveAudit | None = None):
        self.cluster = cluster
        self.master = master
        self.audit = audit or MoveAudit()
        self.breakdown = Breakdown()

    def move(self, scheme: Scheme | str, part: Partition, target: int, fraction: float = 0.5,
             from_key: int | None = None) -> simpy.Process:
        """Start moving the upper `fraction` of `part` (or [from_key, high)) to `target`."""
        scheme = Scheme(scheme)
        if from_key is None:
            from_key = split_key(part, fraction)
        dispatch = {
            Scheme.PHYSICAL: self._physical,
            Scheme.LOGICAL: self._logical,
            Scheme.PHYSIOLOGICAL: self._physiological,
        }
        if scheme not in dispatch:
            raise ValueError(f"Unsupported scheme: {scheme}")
        logger.info(f"Move requested: {scheme.value} partition {part.partition_id} [{from_key}, "
                    f"{part.key_range.high}) -> node {target}")
        return self.cluster.env.process(dispatch[scheme](part, target, from_key))

    def _physical(self, part: Partition, target: int, from_key: int):
        part.split_segment_at(from_key)
        segments = [s for s in part.segments if s.key_range.low >= from_key]
        return (yield from move_physical(self.cluster, self.audit, part, segments, target, self.breakdown))

    def _logical(self, part: Partition, target: int, from_key: int):
        return (yield from move_logical(self.cluster, self.master, self.audit, part, target, from_key,
                                        self.breakdown))

    def _physiological(self, part: Partition, target: int, from_key: int):
        return (yield from move_physiological(self.cluster, self.master, self.audit, part, target, from_key,
                                              self.breakdown))

    def estimate(self, part: Partition, fraction: float = 0.5) -> float:
        """Seconds a move of `fraction` of part should take at streaming speed."""
        cfg = self.cluster.cfg
        segments = max(1, round(len(part.segments) * fraction))
        return estimate_move_cost(segments * cfg.segment_size, cfg.net_bandwidth, cfg.disk_service_time,
                                  cfg.page_size)

    @property
    def plans(self):
        return self.audit.plans
