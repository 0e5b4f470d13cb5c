"""Append-only JSON-lines event log with a byte-stable encoding.

Every simulated run writes one log file.  Each line is one event object

    {"payload": ..., "phase": ..., "rng_cursor": ..., "round": ...,
     "run_id": ..., "type": ..., "v": 1}

serialized canonically (sorted keys, compact separators, ASCII-only),
so replaying a run and diffing the regenerated file against the original
is an exact byte comparison.  Nothing time- or host-dependent is ever
written here; wall-clock concerns (latency, token usage) go to the
ordinary logging stream instead.

Event types
    meta phase:        run_header, epoch_record
    test phase:        round_start, test_choice, parse_retry, fallback,
                       announcement
    discussion phase:  discussion_event, parse_retry, fallback
    settlement phase:  settlement
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Optional, TextIO

from .errors import LogFormatError

SCHEMA_VERSION = 1

PHASE_META = "meta"
PHASE_TEST = "test"
PHASE_DISCUSSION = "discussion"
PHASE_SETTLEMENT = "settlement"


def canonical_json(obj: Any) -> str:
    """The one JSON encoding used for log lines, hashes, and fixtures."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class LogEvent:
    run_id: str
    round: int  # -1 for events outside any round
    phase: str
    type: str
    payload: dict
    rng_cursor: int
    v: int = SCHEMA_VERSION

    def to_line(self) -> str:
        return canonical_json(
            {
                "payload": self.payload,
                "phase": self.phase,
                "rng_cursor": self.rng_cursor,
                "round": self.round,
                "run_id": self.run_id,
                "type": self.type,
                "v": self.v,
            }
        )


class RunLogWriter:
    """Serializes events to an append-only JSONL file (or any text sink)."""

    def __init__(self, sink: TextIO, run_id: str):
        self._sink = sink
        self.run_id = run_id
        self.events_written = 0
        self.bytes_written = 0  # lines are ASCII, so chars == bytes

    def append(
        self,
        *,
        round_index: int,
        phase: str,
        type: str,
        payload: dict,
        rng_cursor: int,
    ) -> LogEvent:
        event = LogEvent(
            run_id=self.run_id,
            round=round_index,
            phase=phase,
            type=type,
            payload=payload,
            rng_cursor=rng_cursor,
        )
        line = event.to_line()
        self._sink.write(line + "\n")
        self.events_written += 1
        self.bytes_written += len(line) + 1
        return event

    def flush(self) -> None:
        self._sink.flush()


_REQUIRED_KEYS = {"payload", "phase", "rng_cursor", "round", "run_id", "type", "v"}


def parse_line(line: str, path: str = "<memory>", line_number: int = 0) -> LogEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(path, line_number, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict) or not _REQUIRED_KEYS.issubset(obj):
        missing = _REQUIRED_KEYS - set(obj) if isinstance(obj, dict) else _REQUIRED_KEYS
        raise LogFormatError(
            path, line_number, f"missing event keys: {sorted(missing)}"
        )
    if obj["v"] != SCHEMA_VERSION:
        raise LogFormatError(path, line_number, f"unsupported schema version {obj['v']}")
    return LogEvent(
        run_id=obj["run_id"],
        round=obj["round"],
        phase=obj["phase"],
        type=obj["type"],
        payload=obj["payload"],
        rng_cursor=obj["rng_cursor"],
        v=obj["v"],
    )


def read_runlog(path: str | Path) -> list[LogEvent]:
    """Read a whole log, raising :class:`LogFormatError` on the first bad line."""
    return list(iter_runlog(path))


def iter_runlog(path: str | Path) -> Iterator[LogEvent]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            yield parse_line(line, str(path), number)


def read_runlog_lenient(path: str | Path) -> tuple[list[LogEvent], Optional[LogFormatError]]:
    """Read the valid prefix of a log; returns (events, first error or None)."""
    events: list[LogEvent] = []
    try:
        for event in iter_runlog(path):
            events.append(event)
    except LogFormatError as exc:
        return events, exc
    return events, None


def run_header(events: list[LogEvent]) -> LogEvent:
    """The run_header event, which must open every well-formed log."""
    if not events or events[0].type != "run_header":
        raise LogFormatError("<events>", 1, "log does not start with run_header")
    return events[0]
