# elasticdb/core/errors.py
"""
Exception hierarchy shared by every sub-package.

Each error specialises the builtin a caller would naturally catch
(ValueError for bad input, KeyError for lookups, RuntimeError for
state violations) so plain `except KeyError` code keeps working.
Absent values (missing keys, exhausted scans) are returned as None and
never raised.
"""

from __future__ import annotations


class ElasticDBError(Exception):
    """Root of every error raised by elasticdb."""


class ConfigError(ElasticDBError, ValueError):
    """One or more configuration fields are invalid.

    `problems` lists every violation, each naming the field or rule.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RoutingError(ElasticDBError, KeyError):
    """A key is outside the range of the partition/map asked to serve it."""


class StorageFullError(ElasticDBError, RuntimeError):
    """No segment or disk space left for the requested placement."""


class CorruptionError(ElasticDBError, RuntimeError):
    """A structural invariant (coverage, chain order) is broken."""


class UnknownPageError(ElasticDBError, KeyError):
    """A page id that no segment on this node knows about."""


class HelperInactiveError(ElasticDBError, RuntimeError):
    """A helper role was requested from a node that is not active."""


class OwnershipError(ElasticDBError, RuntimeError):
    """A node tried to act for a partition it does not own."""


class NodeStandbyError(ElasticDBError, RuntimeError):
    """A message was sent to (or work charged on) a Standby node."""


class PowerOffRefused(ElasticDBError, RuntimeError):
    """A node still hosting data or queries cannot be switched off."""


class MoveAborted(ElasticDBError, RuntimeError):
    """A move plan stopped before changing any state."""


class SplitRefused(ElasticDBError, ValueError):
    """Split key is on a boundary or not aligned to a segment."""


class NoHelpersAvailable(ElasticDBError, RuntimeError):
    """Not enough Standby nodes to attach the requested helpers."""


class UnknownExperiment(ElasticDBError, ValueError):
    """Experiment name not in the registry."""


class MigrationTimeout(ElasticDBError, RuntimeError):
    """Scripted moves were still running when the migration timeout ran out."""


# ── transaction outcomes ─────────────────────────────────────

class TransactionAborted(ElasticDBError, RuntimeError):
    """Base for every reason a transaction is rolled back."""

    def __init__(self, txn_id: int, reason: str = ""):
        self.txn_id = txn_id
        super().__init__(f"txn {txn_id} aborted: {reason}" if reason else f"txn {txn_id} aborted")


class WriteConflict(TransactionAborted):
    """First-writer-wins or snapshot-isolation conflict on a key."""


class DeadlockAbort(TransactionAborted):
    """Chosen as the victim of a waits-for cycle."""
