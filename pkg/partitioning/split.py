# elasticdb/partitioning/split.py
"""Partition splitting and segment pruning."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Iterable

from elasticdb.core.model import KeyRange
from elasticdb.storage.partition import Partition
from elasticdb.storage.segment import Segment

if TYPE_CHECKING:
    from elasticdb.cluster.runtime import Cluster

logger = logging.getLogger("elasticdb.partitioning.split")


def split_partition(cluster: "Cluster", part: Partition, at_key: int,
                    aligned: bool = False) -> tuple[Partition, Partition]:
    """Cut `part` at at_key into two partitions on the same owner.

    `aligned` demands that at_key is already a segment boundary (the
    physiological scheme moves whole segments). The routing map needs no
    change because the owner does not.
    """
    right = part.split(at_key, cluster.new_partition_id(), aligned)
    cluster.node(part.owner).partitions[right.partition_id] = right
    logger.info(f"Split partition {part.partition_id} at {at_key}: {part.key_range} + "
                f"{right.partition_id} {right.key_range}")
    return part, right


def split_key(part: Partition, fraction: float) -> int:
    """Key k such that [k, high) holds about `fraction` of the partition's indexed keys."""
    keys = [k for seg in part.segments for k in seg.keys()]
    if not keys:
        return part.key_range.low + (part.key_range.high - part.key_range.low) // 2
    index = min(len(keys) - 1, max(0, int(round(len(keys) * (1.0 - fraction)))))
    return max(keys[index], part.key_range.low + 1)


def segment_pruning(partitions: Iterable[Partition], key_range: KeyRange) -> list[tuple[Partition, list[Segment]]]:
    """Per partition, only the segments whose sub-ranges meet the predicate range."""
    pruned = []
    for part in partitions:
        if not part.key_range.intersects(key_range):
            continue
        pruned.append((part, part.segments_for(key_range)))
    return pruned
