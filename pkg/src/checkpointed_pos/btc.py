"""Simulated Bitcoin: fixed block cadence, adversary-scheduled mempool, k-deep client views."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

MAX_PAYLOAD = 80
TX_KINDS = ("checkpoint", "bundle_checkpoint", "fraud_proof", "liveness")
INCLUSION_POLICIES = ("prompt", "max_delay", "random", "reverse")


class PayloadSizeError(ValueError):
    pass


def r_fin(k: int, btc_interval: int, delta: int) -> int:
    """Slot budget within which any submitted tx is confirmed in every view."""
    return (k + 2) * btc_interval + delta


@dataclass
class BtcTx:
    kind: str
    payloads: tuple
    submitter: str
    submitted_at: int
    content: object = field(default=None, compare=False, repr=False)
    txid: str = ""

    def __post_init__(self) -> None:
        if self.kind not in TX_KINDS:
            raise ValueError(f"unknown bitcoin tx kind {self.kind!r}")
        self.payloads = tuple(self.payloads)
        for p in self.payloads:
            if len(p) > MAX_PAYLOAD:
                raise PayloadSizeError(f"payload of {len(p)} bytes exceeds {MAX_PAYLOAD}")


@dataclass(frozen=True)
class BtcBlock:
    height: int
    txs: tuple
    produced_at: int


@dataclass(frozen=True)
class BtcView:
    owner: str
    confirmed: tuple
    as_of: int

    def __len__(self) -> int:
        return len(self.confirmed)

    def is_prefix_of(self, other: "BtcView") -> bool:
        return other.confirmed[:len(self.confirmed)] == self.confirmed


class BtcLedger:
    """One canonical chain; block ``j`` is produced at slot ``j * btc_interval``.

    The adversary picks, per transaction, the block it lands in, bounded so
    that a client lagging by ``delta`` still confirms it within ``r_fin``.
    """

    def __init__(self, k: int, btc_interval: int, delta: int, policy: str = "prompt",
                 rng: Optional[random.Random] = None) -> None:
        if policy not in INCLUSION_POLICIES:
            raise ValueError(f"unknown inclusion policy {policy!r}")
        self.k = k
        self.interval = btc_interval
        self.delta = delta
        self.policy = policy
        self.rng = rng or random.Random(0)
        self.blocks: list[BtcBlock] = [BtcBlock(0, (), 0)]
        self.mempool: list[tuple[int, int, BtcTx]] = []
        self.included_at: dict[str, int] = {}
        self._seq = 0
        self._seen: dict[str, int] = {}

    @property
    def r_fin(self) -> int:
        return r_fin(self.k, self.interval, self.delta)

    def inclusion_window(self, slot: int) -> tuple[int, int]:
        first = len(self.blocks)
        last = slot // self.interval + 2
        return first, max(first, last)

    def submit(self, tx: BtcTx, slot: int, target: Optional[int] = None) -> BtcTx:
        for p in tx.payloads:
            if len(p) > MAX_PAYLOAD:
                raise PayloadSizeError(f"payload of {len(p)} bytes exceeds {MAX_PAYLOAD}")
        self._seq += 1
        if not tx.txid:
            tx.txid = f"b{self._seq}"
        first, last = self.inclusion_window(slot)
        if target is None:
            if self.policy == "max_delay":
                target = last
            elif self.policy == "random":
                target = self.rng.randint(first, last)
            else:
                target = first
        target = min(max(target, first), last)
        self.mempool.append((target, self._seq, tx))
        return tx

    def produce_block(self, slot: int) -> Optional[BtcBlock]:
        if slot % self.interval:
            return None
        height = slot // self.interval
        if height < len(self.blocks):
            return None
        chosen = [e for e in self.mempool if e[0] <= height]
        self.mempool = [e for e in self.mempool if e[0] > height]
        chosen.sort(key=lambda e: e[1], reverse=self.policy == "reverse")
        block = BtcBlock(height, tuple(e[2] for e in chosen), slot)
        self.blocks.append(block)
        for tx in block.txs:
            self.included_at[tx.txid] = height
        return block

    def raw_len_at(self, slot: int) -> int:
        """Blocks produced by the end of ``slot``."""
        if slot < 0:
            return 1
        return min(len(self.blocks), slot // self.interval + 1)

    def view_len(self, owner: str, slot: int, lag: int) -> int:
        """Confirmed length for ``owner``: visible tip minus ``k`` blocks, never shrinking."""
        lag = max(0, min(lag, self.delta))
        visible = self.raw_len_at(slot - lag)
        length = max(1, visible - self.k)
        length = max(length, self._seen.get(owner, 1))
        self._seen[owner] = length
        return length

    def confirmed_view(self, owner: str, slot: int, lag: int = 0) -> BtcView:
        length = self.view_len(owner, slot, lag)
        return BtcView(owner, tuple(self.blocks[:length]), slot)
