"""Run-wide shared structures: block tree, validator sets, key registry, Bitcoin ledger."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .btc import BtcLedger
from .crypto import ContentStore, KeyRegistry
from .pos import BlockTree, SetTracker, epoch_of, genesis_block
from .trace import Trace


@dataclass(frozen=True)
class ChainInfo:
    """Facts accumulated along the chain ending at one element."""

    txids: frozenset
    withdrawn: frozenset
    slashed: frozenset
    requests: tuple  # (validator, depth of the element carrying the request)
    leaked: frozenset = frozenset()

    def request_depth(self, v: int) -> Optional[int]:
        for who, depth in self.requests:
            if who == v:
                return depth
        return None


class Context:
    def __init__(self, n: int, delta: int, epoch_len: int, k: int, t_btc: int,
                 ledger: BtcLedger, initial: tuple, queue: tuple = (),
                 keys_erased: bool = False, trace: Optional[Trace] = None) -> None:
        self.n = n
        self.delta = delta
        self.epoch_len = epoch_len
        self.k = k
        self.t_btc = t_btc
        self.ledger = ledger
        self.store = ContentStore()
        self.registry = KeyRegistry(keys_erased)
        self.genesis = genesis_block(self.store)
        self.tree = BlockTree(self.genesis)
        self.sets = SetTracker(self.tree, initial, queue)
        self.trace = trace if trace is not None else Trace()
        self.slot = 0
        self.leak_after: Optional[int] = None
        self._info = {self.genesis.hash: ChainInfo(frozenset(), frozenset(), frozenset(), ())}

    def add(self, element) -> None:
        self.tree.add(element)

    def get(self, h: bytes):
        return self.tree.elements.get(h)

    def child_position(self, parent: bytes) -> tuple[int, int]:
        """(height, epoch) of a PoS block extending ``parent``.

        A bundle closes its epoch, so the first block after one starts the
        next epoch.
        """
        el = self.tree.elements[parent]
        if el.is_bundle:
            height = el.epoch * self.epoch_len + 1
        else:
            height = el.height + 1
        return height, epoch_of(height, self.epoch_len)

    def active_for(self, element) -> tuple:
        return self.sets.active_set(element.parent, element.epoch)

    def voting_set(self, element) -> tuple:
        """Active validators whose votes count for ``element``: those not leaked on its chain."""
        active = self.active_for(element)
        if self.leak_after is None:
            return active
        leaked = self.info(element.hash).leaked
        return tuple(v for v in active if v not in leaked)

    def info(self, h: bytes) -> ChainInfo:
        got = self._info.get(h)
        if got is not None:
            return got
        pending = []
        cur = h
        while cur not in self._info:
            pending.append(cur)
            cur = self.tree.elements[cur].parent
        info = self._info[cur]
        for eh in reversed(pending):
            el = self.tree.elements[eh]
            txids = set(info.txids)
            withdrawn, slashed, leaked = set(info.withdrawn), set(info.slashed), set(info.leaked)
            requests = list(info.requests)
            depth = self.tree.depth[eh]
            for tx in el.txs:
                txids.add(tx.txid)
                if tx.kind == "withdraw":
                    withdrawn.add(tx.subject)
                elif tx.kind == "slash":
                    slashed.add(tx.subject)
                elif tx.kind == "leak":
                    leaked.add(tx.subject)
                elif tx.kind == "withdraw_request" and all(v != tx.subject for v, _ in requests):
                    requests.append((tx.subject, depth))
            info = ChainInfo(frozenset(txids), frozenset(withdrawn), frozenset(slashed),
                             tuple(requests), frozenset(leaked))
            self._info[eh] = info
        return info
