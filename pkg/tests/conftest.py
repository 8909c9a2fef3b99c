# elasticdb/tests/conftest.py
"""
Shared fixtures: tiny seeded clusters and a driver for simpy sub-generators.

The tiny config packs 64 records of 32 bytes into a segment, so the
200-record `loaded` table spans four segments on node 1.
"""

import pytest

from elasticdb.bench.tpcc import load_flat_table
from elasticdb.bench.validate import tiny_config
from elasticdb.cluster.runtime import Cluster
from elasticdb.coordinator.master import Master

TABLE = 1
KEYS = list(range(0, 400, 2))


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def cluster(tiny_cfg):
    c = Cluster(tiny_cfg)
    c.start([1, 2])
    return c


@pytest.fixture
def master(cluster):
    return Master(cluster)


@pytest.fixture
def loaded(cluster, master):
    """Table 1 in one partition on node 1, even keys 0..398."""
    return load_flat_table(cluster, master, TABLE, "t", KEYS, 1, 32, key_max=400)


@pytest.fixture
def drive():
    """Run a generator as a simpy process to completion and return its value."""
    def _drive(cluster, gen):
        return cluster.env.run(until=cluster.env.process(gen))
    return _drive


@pytest.fixture
def txn(master, drive):
    """Run one transaction body; returns (committed, value)."""
    def _txn(body, **kwargs):
        return drive(master.cluster, master.run_transaction(body, **kwargs))
    return _txn
