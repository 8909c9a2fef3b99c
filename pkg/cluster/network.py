# elasticdb/cluster/network.py
"""
Point-to-point message network with latency/bandwidth accounting.

Every node pair is directly connected by its own link (one per
direction). A message occupies its link for size / bandwidth, then
arrives base_latency later, so transfer_time(size) = base_latency +
size / bandwidth on an idle link. Links serialize in FIFO order: a bulk
copy sent as page-sized chunks lets query messages slip in between
chunks instead of waiting behind the whole segment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import simpy

logger = logging.getLogger("elasticdb.cluster.network")


@dataclass
class NetLink:
    src: int
    dst: int
    base_latency: float
    bandwidth: float
    resource: simpy.Resource
    bytes: int = 0
    messages: int = 0

    def transfer_time(self, size: int) -> float:
        return self.base_latency + size / self.bandwidth


class Network:
    def __init__(self, env: simpy.Environment, base_latency: float, bandwidth: float):
        self.env = env
        self.base_latency = base_latency
        self.bandwidth = bandwidth
        self._links: dict[tuple[int, int], NetLink] = {}

    def link(self, src: int, dst: int) -> NetLink:
        link = self._links.get((src, dst))
        if link is None:
            link = NetLink(src, dst, self.base_latency, self.bandwidth, simpy.Resource(self.env, capacity=1))
            self._links[(src, dst)] = link
        return link

    def transfer_time(self, size: int) -> float:
        return self.base_latency + size / self.bandwidth

    def transmit(self, src: int, dst: int, size: int):
        """Carry `size` bytes from src to dst; a simpy sub-generator."""
        link = self.link(src, dst)
        link.messages += 1
        link.bytes += size
        if size:
            with link.resource.request() as req:
                yield req
                yield self.env.timeout(size / link.bandwidth)
        yield self.env.timeout(link.base_latency)

    @property
    def total_bytes(self) -> int:
        return sum(link.bytes for link in self._links.values())

    @property
    def total_messages(self) -> int:
        return sum(link.messages for link in self._links.values())

    def links(self) -> list[NetLink]:
        return [self._links[k] for k in sorted(self._links)]
