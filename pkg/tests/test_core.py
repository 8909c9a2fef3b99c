# elasticdb/tests/test_core.py
"""
Tests for the shared vocabulary: key ranges, composite keys, coverage and
version-chain checks, and the error hierarchy.
"""

import pytest

from elasticdb.core.errors import (
    ConfigError,
    DeadlockAbort,
    RoutingError,
    TransactionAborted,
    WriteConflict,
)
from elasticdb.core.model import (
    OPEN_TS,
    KeyRange,
    RecordKey,
    RecordVersion,
    check_coverage,
    check_version_chain,
    pack_key,
    subtract_ranges,
    unpack_key,
)


class TestKeyRange:
    def test_half_open(self):
        r = KeyRange(10, 20)
        assert 10 in r
        assert 19 in r
        assert 20 not in r

    @pytest.mark.parametrize("low,high", [(5, 5), (7, 3), (-1, 4)])
    def test_invalid_ranges_rejected(self, low, high):
        with pytest.raises(ValueError):
            KeyRange(low, high)

    def test_intersection_and_split(self):
        a, b = KeyRange(0, 10), KeyRange(5, 15)
        assert a.intersects(b)
        assert a.intersection(b) == KeyRange(5, 10)
        assert a.intersection(KeyRange(10, 12)) is None
        assert a.split(4) == (KeyRange(0, 4), KeyRange(4, 10))

    def test_subtract_ranges_keeps_both_sides(self):
        pieces = subtract_ranges([KeyRange(0, 10), KeyRange(20, 30)], KeyRange(3, 5))
        assert pieces == [KeyRange(0, 3), KeyRange(5, 10), KeyRange(20, 30)]


class TestCompositeKeys:
    def test_pack_orders_by_leading_field(self):
        widths = (16, 8)
        assert pack_key((1, 255), widths) < pack_key((2, 0), widths)

    def test_unpack_inverts_pack(self):
        widths = (16, 8, 16)
        assert unpack_key(pack_key((3, 7, 1200), widths), widths) == (3, 7, 1200)

    def test_field_overflow_rejected(self):
        with pytest.raises(ValueError):
            pack_key((256,), (8,))


class TestInvariantChecks:
    def test_coverage_sound(self):
        assert check_coverage([KeyRange(50, 100), KeyRange(0, 50)], 100) is None

    def test_coverage_gap_and_overlap(self):
        assert "gap" in check_coverage([KeyRange(0, 40), KeyRange(50, 100)], 100)
        assert "overlap" in check_coverage([KeyRange(0, 60), KeyRange(50, 100)], 100)
        assert "gap" in check_coverage([KeyRange(0, 60)], 100)

    def test_version_chain(self):
        key = RecordKey(1, 1)
        chain = [RecordVersion(key, b"a", 1, 3), RecordVersion(key, b"b", 3)]
        assert check_version_chain(chain) is None
        chain[0].end_ts = OPEN_TS
        assert check_version_chain(chain) is not None

    def test_pending_version_must_be_newest(self):
        key = RecordKey(1, 1)
        chain = [RecordVersion(key, b"p", None, creator_txn=9), RecordVersion(key, b"a", 1)]
        assert "newest" in check_version_chain(chain)


class TestErrors:
    def test_config_error_lists_every_problem(self):
        e = ConfigError(["page_size: bad", "record_size: bad"])
        assert e.problems == ["page_size: bad", "record_size: bad"]
        assert isinstance(e, ValueError)

    def test_lookup_errors_are_key_errors(self):
        with pytest.raises(KeyError):
            raise RoutingError("outside")

    def test_aborts_carry_txn_id(self):
        for cls in (WriteConflict, DeadlockAbort):
            e = cls(7, "why")
            assert isinstance(e, TransactionAborted)
            assert e.txn_id == 7
            assert "why" in str(e)
