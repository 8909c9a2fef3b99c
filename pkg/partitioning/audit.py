# elasticdb/partitioning/audit.py
"""
Move plans and the move audit log.

Every protocol step of every move appends one line
`time plan_id step bytes` to the audit log. Acceptance tests and the
routing audit read these lines back, so the format is fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from elasticdb.core.errors import MoveAborted
from elasticdb.core.model import KeyRange

logger = logging.getLogger("elasticdb.partitioning.audit")


class Scheme(str, Enum):
    PHYSICAL = "physical"
    LOGICAL = "logical"
    PHYSIOLOGICAL = "physiological"

    @property
    def transfers_ownership(self) -> bool:
        return self is not Scheme.PHYSICAL


class MoveState(str, Enum):
    PLANNED = "planned"
    RUNNING = "running"
    DRAINING = "draining"
    DONE = "done"
    ABORTED = "aborted"


@dataclass(eq=False)
class MovePlan:
    plan_id: int
    scheme: Scheme
    table_id: int
    partition_id: int
    source: int
    target: int
    key_range: KeyRange
    segments: list[int] = field(default_factory=list)
    state: MoveState = MoveState.PLANNED
    started_at: float | None = None
    finished_at: float | None = None
    bytes_moved: int = 0
    records_moved: int = 0
    payload_moved: int = 0
    retries: int = 0

    @property
    def duration(self) -> float | None:
        if self.started_at is None or self.finished_at is None:
            return None
        return self.finished_at - self.started_at


@dataclass
class MoveAudit:
    lines: list[str] = field(default_factory=list)
    plans: list[MovePlan] = field(default_factory=list)
    _in_flight: set[int] = field(default_factory=set)
    _next_id: int = 1

    def new_plan(self, scheme: Scheme, table_id: int, partition_id: int, source: int, target: int,
                 key_range: KeyRange) -> MovePlan:
        """Register a plan; a partition may have only one move in flight."""
        if partition_id in self._in_flight:
            raise MoveAborted(f"partition {partition_id} already has a move in flight")
        plan = MovePlan(self._next_id, scheme, table_id, partition_id, source, target, key_range)
        self._next_id += 1
        self._in_flight.add(partition_id)
        self.plans.append(plan)
        return plan

    def release(self, plan: MovePlan) -> None:
        self._in_flight.discard(plan.partition_id)

    def step(self, now: float, plan: MovePlan, step: str, nbytes: int = 0) -> None:
        self.lines.append(f"{now:.6f} {plan.plan_id} {step} {nbytes}")
        logger.debug(f"Move {plan.plan_id} ({plan.scheme.value}) {step} {nbytes}B at {now:.3f}")

    def export(self, path: str | Path | None = None) -> str:
        text = "".join(line + "\n" for line in self.lines)
        if path is not None:
            Path(path).write_text(text)
        return text

    def steps_of(self, plan_id: int) -> list[str]:
        return [line.split()[2] for line in self.lines if int(line.split()[1]) == plan_id]


def estimate_move_cost(nbytes: int, bandwidth: float, disk_service_time: float, page_size: int) -> float:
    """Rough migration time: bytes over the slower of link and disk streaming rates."""
    disk_rate = page_size / disk_service_time
    return nbytes / min(bandwidth, disk_rate)
