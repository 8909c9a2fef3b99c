# elasticdb/tests/test_storage.py
"""
Tests for segments, partitions, simulated disks and the buffer pool.
"""

import itertools

import pytest

from elasticdb.core.errors import RoutingError, SplitRefused, StorageFullError
from elasticdb.core.model import KeyRange, PageId, RecordKey, RecordVersion, TableSpec
from elasticdb.storage.buffer import BufferPool
from elasticdb.storage.disk import SimDisk, least_loaded, plan_local_rebalance
from elasticdb.storage.partition import Partition
from elasticdb.storage.segment import Segment

TABLE = TableSpec(1, "t", 32, 1000)


def version(key: int, payload: bytes = b"x", ts: int | None = 0) -> RecordVersion:
    return RecordVersion(RecordKey(1, key), payload, ts, size=32)


@pytest.fixture
def segment():
    # 128-byte pages hold 4 records, 2 pages -> capacity 8
    return Segment(1, TABLE, KeyRange(0, 1000), (1, 0), 2, 128)


@pytest.fixture
def partition():
    return Partition(1, TABLE, 1, KeyRange(0, 1000), itertools.count(10).__next__, 2, 128)


class TestSegment:
    def test_capacity(self, segment):
        assert segment.records_per_page == 4
        assert segment.capacity == 8

    def test_add_and_locate(self, segment):
        page = segment.add(42, [version(42)])
        assert page == PageId(1, 0)
        assert 42 in segment
        assert segment.chain(42)[0].payload == b"x"
        assert segment.chain(43) is None

    def test_out_of_range_and_duplicate(self, segment):
        small = Segment(2, TABLE, KeyRange(0, 10), (1, 0), 2, 128)
        with pytest.raises(RoutingError):
            small.add(10, [version(10)])
        segment.add(1, [version(1)])
        with pytest.raises(ValueError):
            segment.add(1, [version(1)])

    def test_full(self, segment):
        for k in range(8):
            segment.add(k, [version(k)])
        assert segment.is_full
        with pytest.raises(StorageFullError):
            segment.add(100, [version(100)])

    def test_freed_position_reused(self, segment):
        for k in range(8):
            segment.add(k, [version(k)])
        slot = segment.locate(3)
        segment.drop(3)
        assert not segment.is_full
        segment.add(50, [version(50)])
        assert segment.locate(50) == slot

    def test_keys_sorted_and_ranged(self, segment):
        for k in (30, 10, 20):
            segment.add(k, [version(k)])
        assert segment.keys() == [10, 20, 30]
        assert segment.keys(KeyRange(15, 30)) == [20]

    def test_split_moves_upper_keys(self, segment):
        for k in range(0, 80, 10):
            segment.add(k, [version(k)])
        right = segment.split_at(segment.median_key(), 2)
        assert segment.key_range == KeyRange(0, 40)
        assert right.key_range == KeyRange(40, 1000)
        assert segment.keys() == [0, 10, 20, 30]
        assert right.keys() == [40, 50, 60, 70]

    def test_clone_is_deep(self, segment):
        segment.add(5, [version(5, b"old")])
        copy = segment.clone()
        copy.chain(5)[0].payload = b"new"
        assert segment.chain(5)[0].payload == b"old"
        assert copy.serialize_index() == segment.serialize_index()

    def test_live_accounting_skips_pending_and_deleted(self, segment):
        segment.add(1, [version(1)])
        segment.add(2, [version(2, ts=None)])
        tomb = version(3)
        tomb.deleted = True
        segment.add(3, [tomb])
        assert segment.live_record_count() == 1
        assert segment.payload_bytes() == 32
        assert segment.live_bytes() == 96


class TestPartition:
    def test_bulk_load_fills_segments(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        assert len(partition.segments) == 3
        assert partition.check_top_index() is None
        assert partition.record_count() == 20

    def test_route_outside(self, partition):
        with pytest.raises(RoutingError):
            partition.route_in_partition(1000)

    def test_insert_splits_full_segment(self, partition):
        for k in range(9):
            partition.insert_record(k, version(k))
        assert len(partition.segments) == 2
        assert partition.check_top_index() is None
        assert partition.segment_lookup(8)[0].key.primary_key == 8

    def test_existing_chain_grows(self, partition):
        partition.insert_record(5, version(5, b"a", 1))
        partition.insert_record(5, version(5, b"b", None))
        assert [v.payload for v in partition.segment_lookup(5)] == [b"a", b"b"]

    def test_split(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        right = partition.split(10, 2)
        assert partition.key_range == KeyRange(0, 10)
        assert right.key_range == KeyRange(10, 1000)
        assert partition.record_count() + right.record_count() == 20
        assert partition.check_top_index() is None
        assert right.check_top_index() is None

    def test_split_refused(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        with pytest.raises(SplitRefused):
            partition.split(0, 2)
        with pytest.raises(SplitRefused):
            partition.split(11, 2, aligned=True)

    def test_segment_pruning(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        assert len(partition.segments_for(KeyRange(0, 4))) == 1
        assert len(partition.segments_for(KeyRange(0, 1000))) == 3

    def test_extend_to_adjacent(self):
        part = Partition(1, TABLE, 1, KeyRange(0, 500), itertools.count(10).__next__, 2, 128)
        part.extend_to(KeyRange(500, 1000))
        assert part.key_range == KeyRange(0, 1000)
        assert part.route_in_partition(900).key_range.high == 1000
        assert part.check_top_index() is None

    def test_items_in_key_order(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        assert [key for _, key, _ in partition.items(KeyRange(5, 12))] == list(range(5, 12))

    def test_dump_names_every_segment(self, partition):
        partition.bulk_load(version(k) for k in range(20))
        lines = partition.dump().splitlines()
        assert lines[0].startswith("partition 1")
        assert sum(line.startswith("  segment") for line in lines) == 3


class TestDisk:
    def test_charge(self):
        disk = SimDisk(1, 0, service_time=0.001, iops_cap=500, capacity_segments=2)
        assert disk.op_time == pytest.approx(0.002)
        assert disk.charge(reads=2, writes=1, page_size=100) == pytest.approx(0.006)
        assert disk.bytes_read == 200
        assert disk.take_interval_ops() == 3
        assert disk.take_interval_ops() == 0

    def test_placement_capacity(self):
        disk = SimDisk(1, 0, 0.001, 500, capacity_segments=1)
        disk.place(7)
        disk.place(7)
        with pytest.raises(StorageFullError):
            disk.place(8)

    def test_least_loaded(self):
        a, b = SimDisk(1, 0, 0.001, 500, 4), SimDisk(1, 1, 0.001, 500, 4)
        a.place(1)
        assert least_loaded([a, b]) is b
        full = SimDisk(1, 2, 0.001, 500, 0)
        with pytest.raises(StorageFullError):
            least_loaded([full])

    def test_local_rebalance_moves_hottest_segment(self):
        moves = plan_local_rebalance({0: 900.0, 1: 10.0}, {0: {5: 3, 6: 9}}, 1000.0, (0.2, 0.8))
        assert moves == [(6, 0, 1)]

    def test_no_rebalance_inside_band(self):
        assert plan_local_rebalance({0: 500.0, 1: 400.0}, {0: {5: 3}}, 1000.0, (0.2, 0.8)) == []


class TestBufferPool:
    HOME = (1, 0)

    def test_miss_then_hit(self):
        pool = BufferPool(2)
        first = pool.request(PageId(1, 0), self.HOME)
        assert not first.hit and first.reads == [self.HOME]
        assert pool.request(PageId(1, 0), self.HOME).hit
        assert (pool.hits, pool.misses) == (1, 1)

    def test_lru_eviction(self):
        pool = BufferPool(2)
        p1, p2, p3 = PageId(1, 0), PageId(1, 1), PageId(1, 2)
        pool.request(p1, self.HOME)
        pool.request(p2, self.HOME)
        pool.request(p1, self.HOME)
        pool.request(p3, self.HOME)
        assert p1 in pool and p3 in pool
        assert p2 not in pool

    def test_dirty_victim_written_back(self):
        pool = BufferPool(2)
        pool.request(PageId(1, 0), (2, 0), write=True)
        pool.request(PageId(1, 1), self.HOME)
        cost = pool.request(PageId(1, 2), self.HOME)
        assert cost.writes == [(2, 0)]
        assert pool.write_backs == 1

    def test_remote_extension_serves_evicted_page(self):
        pool = BufferPool(2)
        pool.extend_remote(helper=3, pages=10)
        for slot in range(3):
            pool.request(PageId(1, slot), self.HOME)
        cost = pool.request(PageId(1, 0), self.HOME)
        assert cost.remote_hit
        assert cost.reads == []
        assert pool.detach_remote() >= 1
        assert pool.remote is None

    def test_drop_segment_writes_back_dirty(self):
        pool = BufferPool(4)
        pool.request(PageId(5, 0), self.HOME, write=True)
        pool.request(PageId(5, 1), self.HOME)
        pool.request(PageId(6, 0), self.HOME, write=True)
        assert pool.drop_segment(5) == [self.HOME]
        assert len(pool) == 1

    def test_flush_segment_keeps_pages(self):
        pool = BufferPool(4)
        pool.request(PageId(5, 0), self.HOME, write=True)
        assert pool.flush_segment(5) == [self.HOME]
        assert PageId(5, 0) in pool
        assert pool.flush_all() == []
