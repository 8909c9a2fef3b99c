# elasticdb/bench/metrics.py
"""
Per-interval benchmark metrics and their CSV form.

A MetricsCollector wakes every metrics_interval, closes one interval and
appends one MetricsRow: throughput, response times of the queries
answered in the interval, cluster power and energy per query, cumulative
bytes moved by repartitioning and the per-query time breakdown.

Values are rounded to the precision they are written with, so a CSV
read back compares equal to the series that produced it.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

from elasticdb.cluster.monitor import BREAKDOWN_KEYS, Breakdown
from elasticdb.coordinator.power import NA, PowerSampler

if TYPE_CHECKING:
    from elasticdb.bench.clients import ClientPool
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.bench.metrics")

_DECIMALS = {
    "time_s": 3,
    "qps": 3,
    "avg_response_ms": 3,
    "p95_response_ms": 3,
    "power_w": 3,
    "energy_per_query_j": 6,
}
_BD_DECIMALS = 4


@dataclass
class MetricsRow:
    time_s: float
    qps: float
    avg_response_ms: float
    p95_response_ms: float
    power_w: float
    energy_per_query_j: float | None
    bytes_moved_cum: int
    active_nodes: int
    bd_cpu_ms: float = 0.0
    bd_disk_io_ms: float = 0.0
    bd_locking_ms: float = 0.0
    bd_logging_ms: float = 0.0
    bd_network_ms: float = 0.0

    def __post_init__(self):
        for name in ("qps", "power_w"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative (got {getattr(self, name)})")
        if self.energy_per_query_j is not None and self.energy_per_query_j < 0:
            raise ValueError(f"energy_per_query_j must be non-negative (got {self.energy_per_query_j})")

    @property
    def breakdown_ms(self) -> dict[str, float]:
        return {k: getattr(self, f"bd_{k}_ms") for k in BREAKDOWN_KEYS}

    def cells(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                out.append(NA)
            elif isinstance(value, int):
                out.append(str(value))
            else:
                out.append(f"{value:.{_DECIMALS.get(f.name, _BD_DECIMALS)}f}")
        return out


HEADER = [f.name for f in fields(MetricsRow)]


def _round(name: str, value: float) -> float:
    return round(value, _DECIMALS.get(name, _BD_DECIMALS))


def emit_csv(series: list[MetricsRow], path: str | Path) -> Path:
    """Header plus one line per row; refuses an empty series."""
    if not series:
        raise ValueError("emit_csv needs a non-empty series")
    for earlier, later in zip(series, series[1:]):
        if later.time_s <= earlier.time_s:
            raise ValueError(f"rows not strictly increasing in time ({earlier.time_s} then {later.time_s})")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for row in series:
            writer.writerow(row.cells())
    return path


def read_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as f:
        for record in csv.DictReader(f):
            values = {}
            for fld in fields(MetricsRow):
                raw = record[fld.name]
                if raw == NA:
                    values[fld.name] = None
                elif fld.name in ("bytes_moved_cum", "active_nodes"):
                    values[fld.name] = int(raw)
                else:
                    values[fld.name] = float(raw)
            rows.append(MetricsRow(**values))
    return rows


class MetricsCollector:
    """Closes one metrics interval at a time; start() runs it as a process."""

    def __init__(self, cluster: "Cluster", pool: "ClientPool", interval: float,
                 bytes_moved: Callable[[], int] = lambda: 0, origin: float = 0.0):
        self.cluster = cluster
        self.pool = pool
        self.interval = interval
        self.bytes_moved = bytes_moved
        self.origin = origin
        self.power = PowerSampler(cluster, interval, completed=lambda: pool.completed)
        self.rows: list[MetricsRow] = []
        self._seen = len(pool.completions)

    def start(self):
        return self.cluster.env.process(self._run())

    def _run(self):
        while True:
            yield self.cluster.env.timeout(self.interval)
            self.close_interval()

    def close_interval(self) -> MetricsRow:
        watts = self.power.sample()
        batch = self.pool.completions[self._seen:]
        self._seen = len(self.pool.completions)
        n = len(batch)
        response_ms = np.array([c.response_time * 1000 for c in batch]) if batch else np.zeros(0)
        bd = Breakdown()
        for c in batch:
            bd.merge(c.breakdown)
        per_query = {k: (v * 1000 / n if n else 0.0) for k, v in bd.as_dict().items()}
        energy = watts * self.interval
        row = MetricsRow(
            time_s=_round("time_s", self.cluster.env.now - self.origin),
            qps=_round("qps", n / self.interval),
            avg_response_ms=_round("avg_response_ms", float(response_ms.mean()) if n else 0.0),
            p95_response_ms=_round("p95_response_ms", float(np.percentile(response_ms, 95)) if n else 0.0),
            power_w=_round("power_w", watts),
            energy_per_query_j=_round("energy_per_query_j", energy / n) if n else None,
            bytes_moved_cum=int(self.bytes_moved()),
            active_nodes=self.power.active_counts[-1],
            **{f"bd_{k}_ms": round(v, _BD_DECIMALS) for k, v in per_query.items()},
        )
        self.rows.append(row)
        logger.debug(f"t={row.time_s:.1f} qps={row.qps:.1f} avg={row.avg_response_ms:.1f}ms "
                     f"power={row.power_w:.1f}W nodes={row.active_nodes}")
        return row
