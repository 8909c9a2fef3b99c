# elasticdb/cluster/trace.py
"""Newline-delimited event trace: time, node, event kind, detail."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class EventTrace:
    enabled: bool = True
    lines: list[str] = field(default_factory=list)

    def record(self, time: float, node: int, kind: str, detail: str = "") -> None:
        if self.enabled:
            self.lines.append(f"{time:.6f} {node} {kind} {detail}".rstrip())

    def export(self, path: str | Path | None = None) -> str:
        text = "".join(line + "\n" for line in self.lines)
        if path is not None:
            Path(path).write_text(text)
        return text

    def of_kind(self, kind: str) -> list[str]:
        return [line for line in self.lines if line.split(" ", 3)[2] == kind]
