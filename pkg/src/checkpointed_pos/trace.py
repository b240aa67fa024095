"""Run traces: ordered ``(slot, party, kind, detail)`` records, serialised as NDJSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Event:
    slot: int
    party: str
    kind: str
    detail: dict

    def to_json(self) -> str:
        return json.dumps({"slot": self.slot, "party": self.party, "kind": self.kind,
                           "detail": self.detail}, sort_keys=True, separators=(",", ":"))


class Trace:
    def __init__(self, events: Iterable[Event] = ()) -> None:
        self.events: list[Event] = list(events)

    def emit(self, slot: int, party: str, kind: str, **detail) -> Event:
        if self.events and slot < self.events[-1].slot:
            raise ValueError(f"trace slot went backwards: {slot} < {self.events[-1].slot}")
        ev = Event(slot, party, kind, detail)
        self.events.append(ev)
        return ev

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[Event]:
        return [e for e in self.events if e.kind in kinds]

    @property
    def header(self) -> dict:
        for e in self.events:
            if e.kind == "config":
                return e.detail
        raise ValueError("trace has no config header")

    def to_ndjson(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ndjson())

    @classmethod
    def from_ndjson(cls, text: str) -> "Trace":
        events = []
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                events.append(Event(rec["slot"], rec["party"], rec["kind"], rec["detail"]))
        return cls(events)

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ndjson(fh.read())
