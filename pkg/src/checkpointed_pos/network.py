"""Synchronous network with adversary-chosen, Δ-bounded delivery per recipient."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    payload: tuple
    sender: str
    sent_at: int
    deliver_by: int
    honest: bool = True
    mid: int = 0

    @property
    def kind(self) -> str:
        return self.payload[0]


@dataclass(frozen=True)
class NetworkPolicy:
    """How the adversary schedules honest traffic.

    ``uniform`` draws each recipient's delay independently, ``max_delay``
    always waits the full bound, ``prompt`` never waits, and ``split``
    serves the ``early`` parties promptly and everyone else late.
    """

    kind: str = "uniform"
    early: frozenset = field(default_factory=frozenset)

    KINDS = ("uniform", "max_delay", "prompt", "split")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown network policy {self.kind!r}")

    @classmethod
    def parse(cls, spec) -> "NetworkPolicy":
        if isinstance(spec, NetworkPolicy):
            return spec
        if isinstance(spec, dict):
            return cls(spec.get("kind", "uniform"), frozenset(spec.get("early", ())))
        kind = str(spec).replace("-", "_")
        if kind.startswith("split:"):
            return cls("split", frozenset(p for p in kind[6:].split(",") if p))
        return cls(kind)


class Network:
    def __init__(self, delta: int, policy: NetworkPolicy | str = "uniform",
                 rng: Optional[random.Random] = None, min_delay: int = 1) -> None:
        self.delta = delta
        self.policy = NetworkPolicy.parse(policy)
        self.rng = rng or random.Random(0)
        self.min_delay = min(min_delay, delta)
        self.parties: set[str] = set()
        self.queue: dict[int, list[tuple[str, Message]]] = defaultdict(list)
        self.history: list[Message] = []
        self._mid = 0

    def register(self, party: str) -> None:
        self.parties.add(party)

    def delay_for(self, recipient: str) -> int:
        kind = self.policy.kind
        if kind == "max_delay":
            return self.delta
        if kind == "prompt":
            return self.min_delay
        if kind == "split":
            return self.min_delay if recipient in self.policy.early else self.delta
        return self.rng.randint(self.min_delay, self.delta)

    def message(self, payload: tuple, sender: str, slot: int, honest: bool = True) -> Message:
        self._mid += 1
        return Message(payload, sender, slot, slot + self.delta, honest, self._mid)

    def schedule_broadcast(self, msg: Message, recipients: Optional[Iterable[str]] = None,
                           delays: Optional[dict] = None) -> dict[str, int]:
        """Queue ``msg`` for every recipient and return the chosen delivery slots.

        Honest messages always land within ``delta`` slots. ``delays`` lets the
        adversary pick per-recipient delays for its own traffic; a ``None``
        delay withholds the message from that recipient.
        """
        if msg.sender not in self.parties:
            raise ConfigurationError(f"unknown sender {msg.sender!r}")
        targets = sorted(self.parties if recipients is None else recipients)
        schedule: dict[str, int] = {}
        for party in targets:
            if party == msg.sender:
                continue
            if delays is not None and party in delays:
                d = delays[party]
                if d is None:
                    continue
                if msg.honest:
                    d = max(0, min(d, self.delta))
            else:
                d = self.delay_for(party)
            schedule[party] = msg.sent_at + d
            self.queue[msg.sent_at + d].append((party, msg))
        self.history.append(msg)
        return schedule

    def due(self, slot: int) -> list[tuple[str, Message]]:
        return self.queue.pop(slot, [])

    def late_join(self, party: str, slot: int, extra: Iterable[Message] = (),
                  include_recent: bool = True) -> list[Message]:
        """Inbox for a party joining at ``slot``.

        Every honest message sent before ``slot - delta`` is included; honest
        messages from the last ``delta`` slots, up to and including ``slot``
        itself, are included when ``include_recent`` is set (the adversary's
        choice), and ``extra`` lets the adversary add traffic of its own.
        """
        cutoff = slot + 1 if include_recent else slot - self.delta
        inbox = [m for m in self.history if m.honest and m.sent_at < cutoff]
        inbox.extend(extra)
        self.register(party)
        return inbox
