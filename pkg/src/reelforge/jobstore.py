"""Append-only event log for pipeline runs.

Every state transition is one NDJSON line in events.ndjson. Replaying the
file reconstructs the run state exactly, which is what makes crash-resume
and the review API's reads possible without a database.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator


class EventLogError(Exception):
    """Corrupt or out-of-order event log."""


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: dict[str, Any]
    ts: float

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "payload": self.payload, "ts": self.ts},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Event":
        rec = json.loads(line)
        return cls(seq=int(rec["seq"]), kind=str(rec["kind"]), payload=dict(rec["payload"]), ts=float(rec["ts"]))


class JobStore:
    """Serialized appender over one events.ndjson file.

    Opening an existing log resumes the sequence counter; appends are
    flushed line-by-line so a crash loses at most the in-flight event.
    """

    def __init__(self, path: str | Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self._clock = clock
        self._lock = threading.Lock()
        self._events: list[Event] = []
        if self.path.exists():
            self._events = list(replay(self.path))
        self._seq = self._events[-1].seq + 1 if self._events else 0

    def append(self, kind: str, payload: dict[str, Any] | None = None) -> Event:
        with self._lock:
            event = Event(seq=self._seq, kind=kind, payload=payload or {}, ts=self._clock())
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(event.to_json() + "\n")
                fh.flush()
            self._events.append(event)
            self._seq += 1
            return event

    def events(self, kind: str | None = None) -> list[Event]:
        with self._lock:
            if kind is None:
                return list(self._events)
            return [e for e in self._events if e.kind == kind]

    def last(self, kind: str) -> Event | None:
        with self._lock:
            for event in reversed(self._events):
                if event.kind == kind:
                    return event
            return None

    def __len__(self) -> int:
        return len(self._events)


def replay(path: str | Path) -> Iterator[Event]:
    """Parse an event log, checking the sequence numbers are gap-free."""
    expected = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            event = Event.from_json(line)
        except (json.JSONDecodeError, KeyError, ValueError) as err:
            raise EventLogError(f"{path}:{lineno}: bad event record: {err}") from err
        if event.seq != expected:
            raise EventLogError(f"{path}:{lineno}: seq {event.seq}, expected {expected}")
        expected += 1
        yield event


def fold(events: Iterator[Event] | list[Event], handlers: dict[str, Callable[[Any, Event], Any]], state: Any) -> Any:
    """Run events through per-kind handlers, threading the state value."""
    for event in events:
        handler = handlers.get(event.kind)
        if handler is not None:
            state = handler(state, event)
    return state
