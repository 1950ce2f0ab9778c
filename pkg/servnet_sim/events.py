"""
Append-only event log: the replayable record of a simulation run.

Events are totally ordered by (tick, seq). Payloads hold only JSON types;
exact rationals are stored as "p/q" strings so the export stays
byte-stable. One JSON object per line, keys sorted.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

from message_security import Nonce, TransactionId


def jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return jsonable(value.value)
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (Nonce, TransactionId)):
        return str(value)
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


@dataclass(frozen=True)
class Event:
    tick: int
    seq: int
    actor: str
    kind: str
    payload: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        record = {"tick": self.tick, "seq": self.seq, "actor": self.actor, "kind": self.kind, "payload": self.payload}
        return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def matches(self, kind: Optional[str] = None, actor: Optional[str] = None, **payload: Any) -> bool:
        if kind is not None and self.kind != kind:
            return False
        if actor is not None and self.actor != actor:
            return False
        return all(self.payload.get(k) == jsonable(v) for k, v in payload.items())


class EventLog:
    def __init__(self, events: Iterable[Event] = ()):
        self._events: List[Event] = list(events)

    def append(self, tick: int, actor: str, kind: str, **payload: Any) -> Event:
        if self._events and tick < self._events[-1].tick:
            raise ValueError(f"Event at tick {tick} after tick {self._events[-1].tick}")
        event = Event(tick, len(self._events), actor, kind, jsonable(payload))
        self._events.append(event)
        return event

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, index: int) -> Event:
        return self._events[index]

    def select(self, kind: Optional[str] = None, actor: Optional[str] = None, **payload: Any) -> List[Event]:
        return [e for e in self._events if e.matches(kind, actor, **payload)]

    def count(self, kind: Optional[str] = None, actor: Optional[str] = None, **payload: Any) -> int:
        return len(self.select(kind, actor, **payload))

    def kinds(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for event in self._events:
            counts[event.kind] = counts.get(event.kind, 0) + 1
        return dict(sorted(counts.items()))

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self._events)

    def write_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_file = path.with_suffix(path.suffix + ".tmp")
        temp_file.write_text(self.to_jsonl(), encoding="utf-8")
        temp_file.replace(path)
        return path

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        events = []
        for line in text.splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            events.append(Event(record["tick"], record["seq"], record["actor"], record["kind"], record["payload"]))
        return cls(events)

    @classmethod
    def read_jsonl(cls, path: Union[str, Path]) -> "EventLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))
