# elasticdb/bench/clients.py
"""
Closed-loop client simulation.

Each client is one simpy process: draw a request, run it through the
master (retrying aborts with the same parameters), record the answer,
sleep an exponential think time, repeat. A client never has more than
one query outstanding, so the next issue time is always the previous
answer time plus the think sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterator, Protocol

import numpy as np

from elasticdb.bench.tpcc import PROCEDURES, READ_ONLY, TpccLite, decode, encode
from elasticdb.cluster.monitor import Breakdown
from elasticdb.concurrency.txn import TxnMode

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster
    from elasticdb.coordinator.master import Master, TxnContext

logger = logging.getLogger("elasticdb.bench.clients")


@dataclass
class Request:
    name: str
    body: Callable[["TxnContext"], Iterator]
    mode: TxnMode = TxnMode.READ_WRITE
    key: int | None = None


class Workload(Protocol):
    def next_request(self, rng: np.random.Generator) -> Request: ...


class TpccWorkload:
    """Weighted pick over the five procedures."""

    def __init__(self, tpcc: TpccLite, mix: dict[str, float] | None = None):
        mix = mix or {name: 1.0 for name in PROCEDURES}
        unknown = set(mix) - set(PROCEDURES)
        if unknown:
            raise ValueError(f"Unsupported transaction(s) in mix: {', '.join(sorted(unknown))}")
        self.tpcc = tpcc
        self.names = [n for n in PROCEDURES if mix.get(n, 0) > 0]
        weights = np.array([mix[n] for n in self.names], dtype=float)
        if not self.names or weights.sum() <= 0:
            raise ValueError("query mix has no positive weight")
        self.weights = weights / weights.sum()

    def next_request(self, rng: np.random.Generator) -> Request:
        name = self.names[int(rng.choice(len(self.names), p=self.weights))]
        params = self.tpcc.draw(rng)
        mode = TxnMode.READ_ONLY if name in READ_ONLY else TxnMode.READ_WRITE
        return Request(name, self.tpcc.procedure(name, params), mode)


@dataclass
class Completion:
    client_id: int
    name: str
    issued_at: float
    answered_at: float
    committed: bool
    attempts: int
    breakdown: Breakdown
    key: int | None = None

    @property
    def response_time(self) -> float:
        return self.answered_at - self.issued_at


@dataclass
class ClientLog:
    issues: list[float] = field(default_factory=list)
    answers: list[float] = field(default_factory=list)
    thinks: list[float] = field(default_factory=list)


class ClientPool:
    def __init__(
        self,
        cluster: "Cluster",
        master: "Master",
        workload: Workload,
        clients: int,
        think_time: float,
        seed: int = 42,
        max_retries: int = 5,
    ):
        self.cluster = cluster
        self.env = cluster.env
        self.master = master
        self.workload = workload
        self.client_count = clients
        self.think_time = think_time
        self.seed = seed
        self.max_retries = max_retries
        self.completions: list[Completion] = []
        self.logs: dict[int, ClientLog] = {cid: ClientLog() for cid in range(clients)}
        self.issued = 0
        self.in_flight = 0
        self.failed = 0
        self.aborts = 0
        self._stopping = False
        self._procs = []

    # ── lifecycle ────────────────────────────────────────────

    def start(self, stagger: bool = True) -> None:
        for cid in range(self.client_count):
            self._procs.append(self.env.process(self._client(cid, stagger)))
        logger.info(f"Started {self.client_count} clients (think {self.think_time * 1000:.0f} ms)")

    def stop(self) -> None:
        """Let every client finish its current query, then exit."""
        self._stopping = True

    @property
    def completed(self) -> int:
        return len(self.completions)

    def closure_holds(self) -> bool:
        return self.issued == self.completed + self.in_flight

    # ── client loop ──────────────────────────────────────────

    def _think(self, rng: np.random.Generator) -> float:
        return float(rng.exponential(self.think_time)) if self.think_time > 0 else 0.0

    def _client(self, cid: int, stagger: bool):
        rng = np.random.default_rng([self.seed, cid])
        log = self.logs[cid]
        if stagger:
            yield self.env.timeout(self._think(rng))
        while not self._stopping:
            request = self.workload.next_request(rng)
            issued_at = self.env.now
            log.issues.append(issued_at)
            self.issued += 1
            self.in_flight += 1
            bd = Breakdown()
            committed, attempts = False, 0
            while not committed and attempts <= self.max_retries:
                attempts += 1
                committed, _ = yield from self.master.run_transaction(request.body, bd, request.mode)
                if not committed:
                    self.aborts += 1
            if not committed:
                self.failed += 1
                logger.debug(f"Client {cid} gave up on {request.name} after {attempts} attempts")
            self.in_flight -= 1
            log.answers.append(self.env.now)
            self.completions.append(Completion(cid, request.name, issued_at, self.env.now, committed, attempts, bd,
                                               request.key))
            self.cluster.trace.record(self.env.now, 0, "answer",
                                      f"client={cid} {request.name} {'ok' if committed else 'failed'}")
            think = self._think(rng)
            log.thinks.append(think)
            yield self.env.timeout(think)


class ReadUpdateWorkload:
    """Point reads and read-modify-writes on one table; `update_ratio` picks the share of updates."""

    def __init__(self, table_id: int, keys: int, update_ratio: float):
        if not 0.0 <= update_ratio <= 1.0:
            raise ValueError(f"update_ratio must be within [0, 1] (got {update_ratio})")
        self.table_id = table_id
        self.keys = keys
        self.update_ratio = update_ratio

    def next_request(self, rng: np.random.Generator) -> Request:
        table_id, key = self.table_id, int(rng.integers(0, self.keys))
        if rng.random() < self.update_ratio:
            def update(ctx: "TxnContext"):
                value = decode((yield from ctx.read(table_id, key)))
                yield from ctx.write(table_id, key, encode(value + 1))
                return value + 1
            return Request("update", update, key=key)

        def read(ctx: "TxnContext"):
            return (yield from ctx.read(table_id, key))
        return Request("read", read, TxnMode.READ_ONLY, key)
