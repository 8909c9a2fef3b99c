# elasticdb/coordinator/power.py
"""
Cluster power model and energy accounting.

What it does:
  - `PowerModel` turns a node's power state and CPU utilization into
    watts: Standby draws a flat p_standby, Active and Booting nodes follow
    a straight line from p_idle (u=0) to p_max (u=1). The network switch
    adds p_switch once.
  - `PowerSampler` samples the cluster every interval from the nodes'
    busy counters (independent of the monitor's own counters).
  - `energy_accounting` integrates a power series and divides by the
    queries completed per interval; idle intervals yield None, written
    as the NA marker in artifacts.

Only data nodes (ids 1..n) draw power; the master is not modelled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable

from elasticdb.cluster.node import PowerState
from elasticdb.config import ClusterConfig

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.coordinator.power")

NA = "NA"


@dataclass(frozen=True)
class PowerModel:
    p_idle: float = 22.0
    p_max: float = 26.0
    p_standby: float = 2.5
    p_switch: float = 20.0

    @classmethod
    def from_config(cls, cfg: ClusterConfig) -> "PowerModel":
        return cls(cfg.p_idle, cfg.p_max, cfg.p_standby, cfg.p_switch)

    def p_active(self, utilization: float) -> float:
        u = min(1.0, max(0.0, utilization))
        return self.p_idle + (self.p_max - self.p_idle) * u

    def node_power(self, state: PowerState, utilization: float = 0.0) -> float:
        if state is PowerState.STANDBY:
            return self.p_standby
        return self.p_active(utilization)

    def cluster_power(self, nodes: Iterable[tuple[PowerState, float]]) -> float:
        """Switch plus every node; `nodes` yields (power state, utilization)."""
        return self.p_switch + sum(self.node_power(state, u) for state, u in nodes)

    def bounds(self, node_count: int) -> tuple[float, float]:
        return (self.p_switch + node_count * self.p_standby, self.p_switch + node_count * self.p_max)


@dataclass
class EnergySample:
    time: float
    watts: float
    energy_j: float
    queries: int
    per_query_j: float | None

    @property
    def per_query_text(self) -> str:
        return NA if self.per_query_j is None else f"{self.per_query_j:.6f}"


def energy_accounting(
    power_series: list[tuple[float, float]],
    completions: list[int],
    start: float = 0.0,
) -> tuple[float, list[EnergySample]]:
    """Total energy (J) and the per-interval energy-per-query series.

    power_series[i] = (end time of interval i, mean watts over it) and
    completions[i] the queries finished in it; both are aligned.
    """
    if len(power_series) != len(completions):
        raise ValueError(f"unaligned series: {len(power_series)} power samples, {len(completions)} counts")
    total = 0.0
    samples = []
    prev = start
    for (t, watts), done in zip(power_series, completions):
        energy = watts * (t - prev)
        total += energy
        samples.append(EnergySample(t, watts, energy, done, energy / done if done > 0 else None))
        prev = t
    return total, samples


@dataclass
class PowerSampler:
    """Samples cluster watts every `interval`; run with `start()`."""

    cluster: "Cluster"
    interval: float
    completed: Callable[[], int] = lambda: 0
    model: PowerModel | None = None
    series: list[tuple[float, float]] = field(default_factory=list)
    completions: list[int] = field(default_factory=list)
    active_counts: list[int] = field(default_factory=list)
    _last_busy: dict[int, float] = field(default_factory=dict)
    _last_done: int = 0
    _t0: float = 0.0

    def __post_init__(self):
        if self.model is None:
            self.model = PowerModel.from_config(self.cluster.cfg)
        self._last_busy = {nid: n.busy_time for nid, n in self.cluster.nodes.items()}
        self._t0 = self.cluster.env.now

    def start(self):
        return self.cluster.env.process(self._run())

    def sample(self) -> float:
        cores = self.cluster.cfg.cpu_cores
        nodes = []
        for nid, node in sorted(self.cluster.nodes.items()):
            busy = node.busy_time - self._last_busy.get(nid, 0.0)
            self._last_busy[nid] = node.busy_time
            nodes.append((node.power_state, min(1.0, busy / (self.interval * cores))))
        watts = self.model.cluster_power(nodes)
        done = self.completed()
        self.series.append((self.cluster.env.now, watts))
        self.completions.append(done - self._last_done)
        self.active_counts.append(sum(1 for state, _ in nodes if state is not PowerState.STANDBY))
        self._last_done = done
        return watts

    def _run(self):
        while True:
            yield self.cluster.env.timeout(self.interval)
            self.sample()

    def energy(self) -> tuple[float, list[EnergySample]]:
        return energy_accounting(self.series, self.completions, self._t0)
