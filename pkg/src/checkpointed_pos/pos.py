"""Accountable BFT engine: blocks, quorum certificates, validator rotation and forensics.

Multi-round BFT machinery is abstracted away. Each height has a single
round-robin proposer, a block is final once more than two thirds of its
epoch's active set pre-commit it, and two conflicting certificates over the
same active set expose their common signers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .crypto import ContentStore, KeyRegistry, Signature, digest

GENESIS_PARENT = bytes(32)


def quorum(n: int) -> int:
    """Smallest signer count strictly above 2n/3."""
    return 2 * n // 3 + 1


def bundle_quorum(n: int) -> int:
    """Smallest signer count strictly above n/2."""
    return n // 2 + 1


def intersection_bound(n: int) -> int:
    return 2 * quorum(n) - n


def epoch_of(height: int, epoch_len: int) -> int:
    return -(-height // epoch_len)


def is_epoch_end(height: int, epoch_len: int) -> bool:
    return height > 0 and height % epoch_len == 0


def _u64(x: int) -> bytes:
    return x.to_bytes(8, "big", signed=True)


@dataclass(frozen=True)
class Tx:
    """A PoS transaction. ``subject`` names the validator a system tx concerns."""

    txid: str
    kind: str = "payment"
    subject: int = -1

    def serialize(self) -> bytes:
        body = f"{self.kind}:{self.subject}:{self.txid}".encode()
        return len(body).to_bytes(4, "big") + body


def _txs_bytes(txs: Sequence[Tx]) -> bytes:
    return len(txs).to_bytes(4, "big") + b"".join(t.serialize() for t in txs)


@dataclass(frozen=True)
class PosBlock:
    parent: bytes
    height: int
    epoch: int
    txs: tuple[Tx, ...]
    proposer: int
    hash: bytes = field(default=b"", compare=False)

    def serialize(self) -> bytes:
        return (b"B" + self.parent + _u64(self.height) + _u64(self.epoch)
                + _txs_bytes(self.txs) + _u64(self.proposer))

    @property
    def is_bundle(self) -> bool:
        return False


@dataclass(frozen=True)
class Bundle:
    """Rollup-mode batch of transactions ordered directly by Bitcoin."""

    parent: bytes
    epoch: int
    txs: tuple[Tx, ...]
    hash: bytes = field(default=b"", compare=False)

    def serialize(self) -> bytes:
        return b"U" + self.parent + _u64(self.epoch) + _txs_bytes(self.txs)

    @property
    def is_bundle(self) -> bool:
        return True


def seal(element, store: ContentStore | None = None):
    """Return ``element`` with its content hash filled in."""
    data = element.serialize()
    h = store.put(data, element) if store is not None else digest(data)
    object.__setattr__(element, "hash", h)
    return element


def make_block(parent: bytes, height: int, epoch: int, txs: Iterable[Tx], proposer: int,
               store: ContentStore | None = None) -> PosBlock:
    return seal(PosBlock(parent, height, epoch, tuple(txs), proposer), store)


def make_bundle(parent: bytes, epoch: int, txs: Iterable[Tx],
                store: ContentStore | None = None) -> Bundle:
    return seal(Bundle(parent, epoch, tuple(txs)), store)


def genesis_block(store: ContentStore | None = None) -> PosBlock:
    return make_block(GENESIS_PARENT, 0, 0, (), -1, store)


@dataclass(frozen=True)
class QuorumCertificate:
    block: bytes
    epoch: int
    signers: frozenset
    sigs: tuple[Signature, ...]
    active_set: tuple[int, ...]

    def serialize(self) -> bytes:
        return (b"Q" + self.block + _u64(self.epoch)
                + b"".join(_u64(v) for v in sorted(self.signers))
                + b"|" + b"".join(_u64(v) for v in self.active_set))


@dataclass(frozen=True)
class FraudProof:
    qc_a: QuorumCertificate
    qc_b: QuorumCertificate
    violators: frozenset

    def serialize(self) -> bytes:
        return b"F" + self.qc_a.serialize() + self.qc_b.serialize()


class NotAViolationError(ValueError):
    pass


class EpochMismatchError(ValueError):
    pass


class BlockTree:
    """Parent-linked store of PoS blocks and bundles."""

    def __init__(self, genesis: PosBlock) -> None:
        self.genesis = genesis
        self.elements: dict[bytes, object] = {genesis.hash: genesis}
        self.children: dict[bytes, list[bytes]] = {genesis.hash: []}
        self.depth: dict[bytes, int] = {genesis.hash: 0}

    def add(self, element) -> bool:
        h = element.hash
        if h in self.elements:
            return False
        if element.parent not in self.elements:
            raise KeyError(f"unknown parent for {h.hex()[:16]}")
        self.elements[h] = element
        self.children[h] = []
        self.children[element.parent].append(h)
        self.depth[h] = self.depth[element.parent] + 1
        return True

    def __contains__(self, h: bytes) -> bool:
        return h in self.elements

    def get(self, h: bytes):
        return self.elements.get(h)

    def chain(self, h: bytes) -> list[bytes]:
        out = []
        while True:
            out.append(h)
            if h == self.genesis.hash:
                break
            h = self.elements[h].parent
        out.reverse()
        return out

    def ancestor_at(self, h: bytes, depth: int) -> bytes:
        while self.depth[h] > depth:
            h = self.elements[h].parent
        return h

    def is_ancestor(self, a: bytes, b: bytes) -> bool:
        """True if ``a`` is ``b`` or an ancestor of ``b``."""
        if a not in self.depth or b not in self.depth or self.depth[a] > self.depth[b]:
            return False
        return self.ancestor_at(b, self.depth[a]) == a

    def conflicts(self, a: bytes, b: bytes) -> bool:
        return not (self.is_ancestor(a, b) or self.is_ancestor(b, a))

    def last_block(self, h: bytes) -> PosBlock:
        """Nearest PoS block at or above ``h`` (skipping bundles)."""
        el = self.elements[h]
        while el.is_bundle:
            el = self.elements[el.parent]
        return el


def proposer_for(active_set: Sequence[int], height: int) -> int:
    return active_set[(height - 1) % len(active_set)]


def try_finalize(block: PosBlock, precommits: Iterable[Signature], active_set: Sequence[int],
                 registry: KeyRegistry | None = None) -> Optional[QuorumCertificate]:
    """Certificate for ``block`` if enough of ``active_set`` pre-committed, else None.

    Signatures from outside the active set, or over another message, are ignored.
    """
    members = set(active_set)
    chosen: dict[int, Signature] = {}
    for sig in precommits:
        if sig.signer not in members or sig.message != block.hash:
            continue
        if registry is not None and not registry.verify(sig, sig.signer, block.hash):
            continue
        chosen.setdefault(sig.signer, sig)
    if len(chosen) < quorum(len(active_set)):
        return None
    return QuorumCertificate(block.hash, block.epoch, frozenset(chosen),
                             tuple(chosen[v] for v in sorted(chosen)), tuple(active_set))


def forensic_identify(qc_a: QuorumCertificate, qc_b: QuorumCertificate, tree: BlockTree) -> FraudProof:
    """Signers of both certificates when their blocks conflict.

    Raises:
        NotAViolationError: the blocks lie on one chain.
        EpochMismatchError: the certificates come from different epochs or active sets.
    """
    if qc_a.epoch != qc_b.epoch or qc_a.active_set != qc_b.active_set:
        raise EpochMismatchError("certificates from different epochs or active sets")
    if not tree.conflicts(qc_a.block, qc_b.block):
        raise NotAViolationError("blocks do not conflict")
    return FraudProof(qc_a, qc_b, qc_a.signers & qc_b.signers)


def verify_fraud_proof(fp: FraudProof, tree: BlockTree, registry: KeyRegistry) -> bool:
    try:
        expected = forensic_identify(fp.qc_a, fp.qc_b, tree)
    except (ValueError, KeyError):
        return False
    if expected.violators != fp.violators:
        return False
    q = quorum(len(fp.qc_a.active_set))
    for qc in (fp.qc_a, fp.qc_b):
        if len(qc.signers) < q or not qc.signers <= set(qc.active_set):
            return False
        if not all(registry.has_signed(v, qc.block) for v in qc.signers):
            return False
    return True


REMOVAL_KINDS = ("withdraw_request", "slash")


def _replace(active: Sequence[int], removals: Sequence[int], queue: Sequence[int]):
    active = list(active)
    queue = list(queue)
    for v in removals:
        if v in active and queue:
            active[active.index(v)] = queue.pop(0)
    return tuple(active), tuple(queue)


@dataclass(frozen=True)
class ValidatorSetLedger:
    sets: dict
    staking_queue: tuple
    withdrawal_requests: dict = field(default_factory=dict)


def rotate_validators(ledger: ValidatorSetLedger, finalized_chain: Sequence,
                      epoch_completed: int) -> ValidatorSetLedger:
    """Build ``sets[epoch_completed + 1]``.

    Validators whose withdrawal (or slashing) was recorded in the completed
    epoch are swapped, position for position, with the head of the queue.
    """
    removals: list[int] = []
    requests = dict(ledger.withdrawal_requests)
    queue = list(ledger.staking_queue)
    for el in finalized_chain:
        if el.epoch != epoch_completed:
            continue
        for tx in el.txs:
            if tx.kind in REMOVAL_KINDS and tx.subject not in removals:
                removals.append(tx.subject)
                if tx.kind == "withdraw_request":
                    requests[tx.subject] = getattr(el, "height", -1)
            elif tx.kind == "bond":
                queue.append(tx.subject)
    new_set, queue = _replace(ledger.sets[epoch_completed], removals, queue)
    sets = dict(ledger.sets)
    sets[epoch_completed + 1] = new_set
    return ValidatorSetLedger(sets, tuple(queue), requests)


@dataclass(frozen=True)
class SetSnapshot:
    epoch: int
    active: tuple
    queue: tuple
    pending: tuple


class SetTracker:
    """Validator set along any chain in a :class:`BlockTree`, memoised per element."""

    def __init__(self, tree: BlockTree, initial: Sequence[int], queue: Sequence[int]) -> None:
        self.tree = tree
        self._snap = {tree.genesis.hash: SetSnapshot(0, tuple(initial), tuple(queue), ())}

    @staticmethod
    def _roll(snap: SetSnapshot, epoch: int) -> SetSnapshot:
        if epoch <= snap.epoch:
            return snap
        active, queue = _replace(snap.active, snap.pending, snap.queue)
        return SetSnapshot(epoch, active, queue, ())

    def after(self, h: bytes) -> SetSnapshot:
        snap = self._snap.get(h)
        if snap is not None:
            return snap
        pending = []
        cur = h
        while cur not in self._snap:
            pending.append(cur)
            cur = self.tree.elements[cur].parent
        snap = self._snap[cur]
        for eh in reversed(pending):
            el = self.tree.elements[eh]
            snap = self._roll(snap, el.epoch)
            removals = list(snap.pending)
            queue = list(snap.queue)
            for tx in el.txs:
                if tx.kind in REMOVAL_KINDS and tx.subject not in removals:
                    removals.append(tx.subject)
                elif tx.kind == "bond":
                    queue.append(tx.subject)
            snap = SetSnapshot(snap.epoch, snap.active, tuple(queue), tuple(removals))
            self._snap[eh] = snap
        return snap

    def active_set(self, parent: bytes, epoch: int) -> tuple:
        """Active set for a child of ``parent`` that belongs to ``epoch``."""
        return self._roll(self.after(parent), epoch).active


class Status(str, enum.Enum):
    ACTIVE = "active"
    REQUESTED = "requested"
    GRANTED = "granted"
    WITHDRAWN = "withdrawn"
    SLASHED = "slashed"


_NEXT = {
    Status.ACTIVE: {Status.REQUESTED, Status.SLASHED},
    Status.REQUESTED: {Status.GRANTED, Status.SLASHED},
    Status.GRANTED: {Status.WITHDRAWN, Status.SLASHED},
    Status.WITHDRAWN: set(),
    Status.SLASHED: set(),
}


class WithdrawalState:
    """Per-validator status machine: active, requested, granted, withdrawn (or slashed)."""

    def __init__(self) -> None:
        self.status: dict[int, Status] = {}
        self.grant_slot: dict[int, int] = {}

    def get(self, v: int) -> Status:
        return self.status.get(v, Status.ACTIVE)

    def move(self, v: int, to: Status, slot: int | None = None) -> bool:
        cur = self.get(v)
        if cur == to:
            return False
        if to not in _NEXT[cur]:
            raise ValueError(f"illegal transition {cur.value} -> {to.value} for validator {v}")
        self.status[v] = to
        if to == Status.GRANTED and slot is not None:
            self.grant_slot[v] = slot
        return True
