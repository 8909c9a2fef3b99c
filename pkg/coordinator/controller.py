# elasticdb/coordinator/controller.py
"""
Controller: threshold-based elasticity decisions on the master.

What it does:
  - Ingests one NodeStats batch per monitor interval and keeps, per
    node, a short utilization window plus consecutive over/under
    counters.
  - `evaluate()` is a pure decision step returning Actions:
      k intervals above cpu_upper_threshold  -> offload hint
      still above one interval later         -> move half of the node's
                                                hottest partition to the
                                                least-loaded node with
                                                headroom, powering on a
                                                Standby node if none has
      every node below cpu_lower_threshold
      for k intervals (more than one active) -> scale-in of the
                                                least-loaded node
      disk IOPS outside the band             -> local segment rebalance
  - `attach()` subscribes to the monitor and executes the actions as
    simpy processes; at most one structural action runs at a time.
  - Every action is one line of the decision log.

Design decisions:
  - Thresholds compare raw interval utilization; the window average is
    only used to rank candidate targets.
  - After a structural action the opposite direction is blocked for k
    intervals, which keeps a constant workload from oscillating.
  - A load schedule of expected changes scales the observed utilization
    for the window it announces, so a known ramp triggers early.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable

from elasticdb.cluster.monitor import NodeStats
from elasticdb.core.errors import MoveAborted, NodeStandbyError, PowerOffRefused, StorageFullError
from elasticdb.partitioning.audit import Scheme
from elasticdb.partitioning.physical import relocate_segment
from elasticdb.storage.disk import plan_local_rebalance

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.partitioning.mover import Mover

logger = logging.getLogger("elasticdb.coordinator.controller")


class ActionKind(str, Enum):
    OFFLOAD_HINT = "offload_hint"
    POWER_ON = "power_on"
    MOVE = "move"
    SCALE_IN = "scale_in"
    POWER_OFF = "power_off"
    LOCAL_REBALANCE = "local_rebalance"


@dataclass
class Action:
    time: float
    trigger: str
    kind: ActionKind
    target: int
    source: int | None = None
    partition_id: int | None = None
    segment_id: int | None = None
    disks: tuple[int, int] | None = None

    def log_line(self) -> str:
        where = f"{self.source}->{self.target}" if self.source is not None else f"{self.target}"
        extra = ""
        if self.partition_id is not None:
            extra = f" partition={self.partition_id}"
        if self.segment_id is not None:
            extra = f" segment={self.segment_id} disks={self.disks[0]}->{self.disks[1]}"
        return f"{self.time:.3f} {self.trigger} {self.kind.value} {where}{extra}"


@dataclass(frozen=True)
class LoadHint:
    """Expected load factor from time `at` on (1.5 = fifty percent more)."""
    at: float
    factor: float


@dataclass
class ControllerState:
    window: dict[int, deque] = field(default_factory=dict)
    over: dict[int, int] = field(default_factory=dict)
    under: int = 0
    hinted: set[int] = field(default_factory=set)
    in_flight: bool = False
    last_scale_out: int | None = None
    last_scale_in: int | None = None
    intervals: int = 0

    def smoothed(self, node_id: int) -> float:
        w = self.window.get(node_id)
        return sum(w) / len(w) if w else 0.0


class Controller:
    def __init__(self, cluster: "Cluster", mover: "Mover", scheme: Scheme = Scheme.PHYSIOLOGICAL,
                 schedule: list[LoadHint] | None = None, enabled: bool = True):
        self.cluster = cluster
        self.cfg = cluster.cfg
        self.mover = mover
        self.scheme = Scheme(scheme)
        self.schedule = sorted(schedule or [], key=lambda h: h.at)
        self.enabled = enabled
        self.state = ControllerState()
        self.decisions: list[str] = []
        self.actions: list[Action] = []
        self.listeners: list[Callable[[Action], None]] = []

    # ── decision step ────────────────────────────────────────

    def _expected_factor(self, now: float) -> float:
        horizon = now + self.cfg.confirm_intervals * self.cfg.monitor_interval
        factor = 1.0
        for hint in self.schedule:
            if hint.at <= horizon:
                factor = hint.factor
        return factor

    def evaluate(self, now: float, stats: list[NodeStats]) -> list[Action]:
        """Turn one stats batch into actions; never touches the cluster."""
        cfg, st = self.cfg, self.state
        k = cfg.confirm_intervals
        st.intervals += 1
        factor = self._expected_factor(now)
        data_stats = [s for s in stats if not self.cluster.node(s.node_id).helper_for]
        util = {s.node_id: min(1.0, s.cpu_utilization * factor) for s in data_stats}

        for s in data_stats:
            st.window.setdefault(s.node_id, deque(maxlen=k)).append(util[s.node_id])
            if util[s.node_id] > cfg.cpu_upper_threshold:
                st.over[s.node_id] = st.over.get(s.node_id, 0) + 1
            else:
                st.over[s.node_id] = 0
                st.hinted.discard(s.node_id)
        for nid in list(st.over):
            if nid not in util:
                del st.over[nid]
        if util and all(u < cfg.cpu_lower_threshold for u in util.values()):
            st.under += 1
        else:
            st.under = 0

        actions: list[Action] = []
        actions += self._local_rebalance(now, stats)
        if st.in_flight:
            return actions

        overloaded = sorted((nid for nid, n in st.over.items() if n >= k), key=lambda nid: -util[nid])
        for nid in overloaded:
            if nid not in st.hinted:
                st.hinted.add(nid)
                actions.append(Action(now, f"cpu={util[nid]:.2f}", ActionKind.OFFLOAD_HINT, nid))
        persistent = [nid for nid in overloaded if st.over[nid] > k]
        if persistent and not self._blocked(st.last_scale_in):
            actions += self._scale_out(now, persistent[0], util, stats)
        elif st.under >= k and not self._blocked(st.last_scale_out):
            actions += self._scale_in(now, util)
        return actions

    def _blocked(self, last: int | None) -> bool:
        return last is not None and self.state.intervals - last < self.cfg.confirm_intervals

    def _scale_out(self, now: float, hot: int, util: dict[int, float], stats: list[NodeStats]) -> list[Action]:
        node_stats = next(s for s in stats if s.node_id == hot)
        node = self.cluster.node(hot)
        candidates = [(p.cpu_cycles, pid) for pid, p in node_stats.partitions.items() if pid in node.partitions]
        if not candidates:
            return []
        share, pid = max(candidates)
        trigger = f"cpu={util[hot]:.2f}"
        moved_share = share / 2
        peers = sorted(
            (self.state.smoothed(nid), nid) for nid in util
            if nid != hot and self.cluster.node(nid).is_active
        )
        actions = []
        target = next((nid for load, nid in peers if load + moved_share < self.cfg.cpu_upper_threshold), None)
        if target is None:
            standby = sorted(n.node_id for n in self.cluster.standby_nodes())
            if not standby:
                logger.warning(f"Node {hot} overloaded, no standby node and no peer with headroom")
                return []
            target = standby[0]
            actions.append(Action(now, trigger, ActionKind.POWER_ON, target))
        actions.append(Action(now, trigger, ActionKind.MOVE, target, source=hot, partition_id=pid))
        self.state.last_scale_out = self.state.intervals
        return actions

    def _scale_in(self, now: float, util: dict[int, float]) -> list[Action]:
        active = [nid for nid in util if self.cluster.node(nid).is_active]
        if len(active) <= 1:
            return []
        ranked = sorted(active, key=lambda nid: (self.state.smoothed(nid), -nid))
        victim = ranked[0]
        trigger = f"cpu={util[victim]:.2f}"
        self.state.last_scale_in = self.state.intervals
        self.state.under = 0
        if not self.cluster.node(victim).partitions:
            return [Action(now, trigger, ActionKind.POWER_OFF, victim)]
        return [Action(now, trigger, ActionKind.SCALE_IN, ranked[1], source=victim)]

    def _local_rebalance(self, now: float, stats: list[NodeStats]) -> list[Action]:
        cfg = self.cfg
        band = (cfg.iops_band_low, cfg.iops_band_high)
        actions = []
        for s in stats:
            node = self.cluster.node(s.node_id)
            if len(node.disks) < 2:
                if any(v > band[1] * cfg.disk_iops_cap for v in s.disk_iops.values()):
                    logger.info(f"Node {s.node_id} disk IOPS above band, no second local disk")
                continue
            for seg, src, dst in plan_local_rebalance(s.disk_iops, self._segment_ops(node, s), cfg.disk_iops_cap,
                                                      band):
                actions.append(Action(now, f"iops={s.disk_iops[src]:.0f}", ActionKind.LOCAL_REBALANCE,
                                      s.node_id, segment_id=seg, disks=(src, dst)))
        return actions

    @staticmethod
    def _segment_ops(node, s: NodeStats) -> dict[int, dict[int, int]]:
        """Per-disk segment activity, spread from each partition's page requests."""
        ops: dict[int, dict[int, int]] = {}
        for pid, pstats in s.partitions.items():
            part = node.partitions.get(pid)
            if part is None or not part.segments:
                continue
            share = pstats.page_requests // len(part.segments)
            for seg in part.segments:
                if seg.home[0] == node.node_id:
                    ops.setdefault(seg.home[1], {})[seg.segment_id] = share
        return ops

    # ── execution ────────────────────────────────────────────

    def attach(self) -> None:
        self.cluster.monitor.subscribe(self.on_stats)

    def on_stats(self, now: float, stats: list[NodeStats]) -> None:
        if not self.enabled:
            return
        actions = self.evaluate(now, stats)
        for action in actions:
            self.decisions.append(action.log_line())
            self.actions.append(action)
            logger.info(f"Controller: {action.log_line()}")
        structural = [a for a in actions if a.kind not in (ActionKind.OFFLOAD_HINT, ActionKind.LOCAL_REBALANCE)]
        for a in actions:
            if a.kind is ActionKind.LOCAL_REBALANCE:
                self.cluster.env.process(self._rebalance(a))
        if structural:
            self.state.in_flight = True
            self.cluster.env.process(self._execute(structural))

    def on_done(self, listener: Callable[[Action], None]) -> None:
        """Call `listener(action)` after each structural action completes."""
        self.listeners.append(listener)

    @property
    def offload_hints(self) -> set[int]:
        return set(self.state.hinted)

    def _execute(self, actions: list[Action]):
        try:
            for action in actions:
                if action.kind is ActionKind.POWER_ON:
                    yield self.cluster.power_on(action.target)
                elif action.kind is ActionKind.MOVE:
                    part = self.cluster.node(action.source).partitions.get(action.partition_id)
                    if part is not None:
                        yield self.mover.move(self.scheme, part, action.target, fraction=0.5)
                elif action.kind is ActionKind.SCALE_IN:
                    yield from self._drain_node(action.source, action.target)
                    self.cluster.power_off(action.source)
                elif action.kind is ActionKind.POWER_OFF:
                    self.cluster.power_off(action.target)
                for listener in self.listeners:
                    listener(action)
        except (MoveAborted, NodeStandbyError, PowerOffRefused, StorageFullError) as e:
            logger.warning(f"Controller action failed: {e}")
        finally:
            self.state.in_flight = False
            self.state.over.clear()
            self.state.hinted.clear()

    def _drain_node(self, source: int, target: int):
        node = self.cluster.node(source)
        for part in sorted(node.partitions.values(), key=lambda p: p.partition_id):
            yield self.mover.move(self.scheme, part, target, from_key=part.key_range.low)

    def _rebalance(self, action: Action):
        node = self.cluster.node(action.target)
        seg = next((s for p in node.partitions.values() for s in p.segments if s.segment_id == action.segment_id),
                   None)
        if seg is None or seg.home != (node.node_id, action.disks[0]):
            return
        yield from relocate_segment(self.cluster, node.node_id, seg, (node.node_id, action.disks[1]))

    def export_decisions(self, path: str | Path | None = None) -> str:
        text = "".join(line + "\n" for line in self.decisions)
        if path is not None:
            Path(path).write_text(text)
        return text
