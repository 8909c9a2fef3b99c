# elasticdb/cluster/monitor.py
"""
Monitoring: per-node utilization samples and the per-query time breakdown.

Every monitor_interval each Active node reports one NodeStats to the
registered sinks (the coordinator's controller). CPU utilization is busy
core-seconds over interval x cores, so it stays within [0, 1] for
multi-core nodes and equals busy/interval on a single core.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.cluster.monitor")

BREAKDOWN_KEYS = ("cpu", "disk_io", "locking", "logging", "network")


@dataclass
class Breakdown:
    cpu: float = 0.0
    disk_io: float = 0.0
    locking: float = 0.0
    logging: float = 0.0
    network: float = 0.0

    def add(self, category: str, seconds: float) -> None:
        setattr(self, category, getattr(self, category) + seconds)

    def merge(self, other: "Breakdown") -> None:
        for k in BREAKDOWN_KEYS:
            self.add(k, getattr(other, k))

    @property
    def total(self) -> float:
        return sum(getattr(self, k) for k in BREAKDOWN_KEYS)

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in BREAKDOWN_KEYS}


@dataclass
class PartitionStats:
    partition_id: int
    cpu_cycles: float
    page_requests: int
    net_io: int


@dataclass
class NodeStats:
    node_id: int
    interval: tuple[float, float]
    cpu_utilization: float
    mem_used: int
    disk_iops: dict[int, float]
    net_bytes: int
    partitions: dict[int, PartitionStats] = field(default_factory=dict)

    @property
    def total_iops(self) -> float:
        return sum(self.disk_iops.values())


class Monitor:
    """Periodic report_stats driver; one simpy process per cluster."""

    def __init__(self, cluster: "Cluster", interval: float):
        self.cluster = cluster
        self.interval = interval
        self.sinks: list[Callable[[float, list[NodeStats]], None]] = []
        self.history: list[list[NodeStats]] = []

    def subscribe(self, sink: Callable[[float, list[NodeStats]], None]) -> None:
        self.sinks.append(sink)

    def start(self):
        return self.cluster.env.process(self._run())

    def _run(self):
        env = self.cluster.env
        while True:
            yield env.timeout(self.interval)
            batch = [node.report_stats(self.interval) for node in self.cluster.active_nodes()]
            self.history.append(batch)
            for sink in self.sinks:
                sink(env.now, batch)
