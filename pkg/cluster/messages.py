# elasticdb/cluster/messages.py
"""Request/response shapes exchanged between the master and data nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from elasticdb.core.model import KeyRange

CONTROL_BYTES = 64


class OpKind(str, Enum):
    READ = "read"
    WRITE = "write"
    INSERT = "insert"
    DELETE = "delete"
    SCAN = "scan"

    @property
    def writes(self) -> bool:
        return self in (OpKind.WRITE, OpKind.INSERT, OpKind.DELETE)


class Reply(str, Enum):
    OK = "ok"
    NOT_HERE = "not_here"
    REDIRECT = "redirect"


@dataclass
class RecordOp:
    kind: OpKind
    table_id: int
    key: int = 0
    payload: bytes = b""
    key_range: KeyRange | None = None

    def request_bytes(self) -> int:
        return CONTROL_BYTES + len(self.payload)


@dataclass
class Unserved:
    key_range: KeyRange
    reply: Reply
    hint: int | None = None


@dataclass
class OpResult:
    status: Reply
    value: bytes | None = None
    hint: int | None = None
    rows: list[tuple[int, bytes]] = field(default_factory=list)
    unserved: list[Unserved] = field(default_factory=list)
    node_id: int | None = None

    def response_bytes(self, record_size: int) -> int:
        return CONTROL_BYTES + (record_size if self.value is not None else 0) + len(self.rows) * record_size
