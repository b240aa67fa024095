"""Client state machine.

A client reads the confirmed Bitcoin chain transaction by transaction and
rebuilds a checkpointed chain (CP) from it. On top of CP it outputs a ledger
(L) using either the fast rule (extend CP along finalized PoS blocks up to the
first fork) or the slow rule (L is CP). Liveness transactions drive the
normal, frozen and rollup modes; fraud proofs and conflicting checkpoints feed
the slashable set.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .btc import BtcTx
from .checkpoint import (bundle_checkpoint_valid, checkpoint_valid, decode_op_return,
                         encode_op_return, expected_epoch, make_checkpoint, signers_of)
from .context import Context
from .crypto import bitmap_len, short
from .pos import (FraudProof, NotAViolationError, EpochMismatchError, Tx, forensic_identify,
                  quorum, try_finalize, verify_fraud_proof)

NORMAL, FROZEN, ROLLUP = "normal", "frozen", "rollup"
FRAUD_TAG = b"BBNF"
LIVENESS_TAG = b"BBNL"


def checkpoint_tx(cp, submitter: str, slot: int, bundle: bool = False) -> BtcTx:
    kind = "bundle_checkpoint" if bundle else "checkpoint"
    return BtcTx(kind, encode_op_return(cp), submitter, slot, content=cp)


def fraud_proof_tx(fp: FraudProof, ctx: Context, submitter: str, slot: int) -> BtcTx:
    d = ctx.store.put(fp.serialize(), fp)
    return BtcTx("fraud_proof", (FRAUD_TAG + d,), submitter, slot, content=fp)


def liveness_tx(tx: Tx, ctx: Context, submitter: str, slot: int) -> BtcTx:
    d = ctx.store.put(tx.serialize(), tx)
    return BtcTx("liveness", (LIVENESS_TAG + d,), submitter, slot, content=tx)


def is_prefix(a: Sequence[bytes], b: Sequence[bytes]) -> bool:
    """Chains are root-to-tip paths in one tree, so matching at ``len(a)-1`` suffices."""
    return len(a) <= len(b) and b[len(a) - 1] == a[-1]


def common_prefix(a: Sequence[bytes], b: Sequence[bytes]) -> int:
    i = 0
    for x, y in zip(a, b):
        if x != y:
            break
        i += 1
    return i


def extend_to_pos_chain(children: Callable[[bytes], Sequence[bytes]], cp: Sequence[bytes]) -> list:
    """Follow the unique finalized child from CP's tip, stopping before a fork."""
    chain = list(cp)
    while True:
        kids = children(chain[-1])
        if len(kids) != 1:
            return chain
        chain.append(kids[0])


def slow_finality_output(cp: Sequence[bytes]) -> list:
    return list(cp)


@dataclass
class Trigger:
    txid: str
    height: int
    resolved: bool = False


@dataclass
class _Sighting:
    cp: object
    btc_height: int
    epoch: int = -1
    active: tuple = ()
    signers: frozenset = frozenset()
    resolved: bool = False


class Knowledge:
    """What one party has received: element data, votes, certificates."""

    def __init__(self, party: str, ctx: Context) -> None:
        self.party = party
        self.ctx = ctx
        g = ctx.genesis.hash
        self.known: dict[bytes, int] = {g: 0}
        self.votes: dict[bytes, dict] = defaultdict(dict)
        self.qcs: dict[bytes, object] = {g: None}
        self.ready_children: dict[bytes, list] = defaultdict(list)
        self.bundle_sigs: dict[bytes, dict] = defaultdict(dict)
        self.buckets: dict[tuple, list] = defaultdict(list)
        self.conflicts: list[tuple] = []
        self.inbox_elements: list = []
        self.last_active: dict[int, int] = {}
        self.changed = True

    def receive(self, payload: tuple, slot: int) -> None:
        kind = payload[0]
        if kind in ("block", "bundle"):
            el = payload[1]
            if el.hash in self.known:
                return
            self.known[el.hash] = slot
            if not el.is_bundle:
                self.last_active[el.proposer] = slot
            self.inbox_elements.append(el)
            if el.hash in self.qcs:
                self._ready(el.hash)
            elif not el.is_bundle:
                self._try_qc(el.hash)
        elif kind == "vote":
            sig = payload[1]
            self.last_active[sig.signer] = slot
            bucket = self.votes[sig.message]
            if sig.signer not in bucket:
                bucket[sig.signer] = sig
                self._try_qc(sig.message)
        elif kind == "bundle_sig":
            sig = payload[1]
            self.bundle_sigs[sig.message].setdefault(sig.signer, sig)
        self.changed = True

    def _try_qc(self, h: bytes) -> None:
        if h in self.qcs:
            return
        el = self.ctx.get(h)
        votes = self.votes.get(h)
        if el is None or el.is_bundle or not votes:
            return
        voting = self.ctx.voting_set(el)
        if len(votes) < quorum(len(voting)):
            return
        qc = try_finalize(el, votes.values(), voting)
        if qc is None:
            return
        self.qcs[h] = qc
        bucket = self.buckets[(qc.epoch, qc.active_set)]
        for other in bucket:
            if self.ctx.tree.conflicts(other.block, h):
                self.conflicts.append((other, qc))
        bucket.append(qc)
        if h in self.known:
            self._ready(h)

    def _ready(self, h: bytes) -> None:
        self.ready_children[self.ctx.get(h).parent].append(h)

    def final_and_available(self, h: bytes) -> bool:
        return h in self.known and h in self.qcs

    def children(self, h: bytes) -> list:
        return self.ready_children.get(h, [])


class ClientState(Knowledge):
    """Per-client fork choice with checkpointing, recovery modes and slashing.

    ``finality`` is ``"fast"`` or ``"slow"``. With ``baseline`` set the client
    ignores Bitcoin and outputs the longest finalized chain.
    """

    def __init__(self, party: str, ctx: Context, finality: str = "fast", lag: int = 0,
                 baseline: bool = False, traced: bool = False, rng=None) -> None:
        super().__init__(party, ctx)
        if finality not in ("fast", "slow"):
            raise ValueError(f"unknown finality rule {finality!r}")
        self.finality = finality
        self.lag = lag
        self.baseline = baseline
        self.traced = traced
        self.rng = rng
        g = ctx.genesis.hash
        self.cp: list[bytes] = [g]
        self.cp_pos: dict[bytes, int] = {g: 0}
        self.L: list[bytes] = [g]
        self.mode = NORMAL
        self.stalled = False
        self.slashable: set[int] = set()
        self.implicated: set[int] = set()
        self.records: list[tuple[int, int]] = []
        self.sightings: list[_Sighting] = []
        self.triggers: list[Trigger] = []
        self.anchor: Optional[Trigger] = None
        self.rollup_epoch = -1
        self.rollups = 0
        self.confirmed_len = 1
        self.confirmed_at: dict[int, int] = {0: 0}
        self.next_height = 1
        self.tx_index = 0
        self.outbox: list[tuple[int, str]] = []
        self.granted: set[int] = set()
        self.slash_log: list[tuple[int, int]] = []
        self.rollup_entry = 0
        self.rollup_bundles = 0
        self.exit_slot = 0
        self._withdrawn_seen: set[int] = set()
        self._conflict_cursor = 0
        self._hazard_seen = False

    # -- tracing -----------------------------------------------------------

    def _emit(self, kind: str, **detail) -> None:
        if self.traced:
            self.ctx.trace.emit(self.ctx.slot, self.party, kind, **detail)

    def _emit_diff(self, kind: str, old: list, new: list) -> None:
        keep = common_prefix(old, new)
        self._emit(kind, keep=keep, add=[short(h) for h in new[keep:]])

    # -- derived views -----------------------------------------------------

    @property
    def cp_info(self):
        return self.ctx.info(self.cp[-1])

    @property
    def withdrawn(self) -> frozenset:
        return self.ctx.info(self.L[-1] if self.baseline else self.cp[-1]).withdrawn

    def expected_epoch(self) -> int:
        tip = self.ctx.get(self.cp[-1])
        if tip.is_bundle:
            return tip.epoch + 1
        return expected_epoch(tip.height, tip.epoch, self.ctx.epoch_len)

    def in_output(self, txid: str) -> bool:
        return txid in self.ctx.info(self.L[-1]).txids

    def bundle_cutoff(self) -> int:
        """Bitcoin height fixing the contents of the next bundle: the later of rollup entry and the last CP change."""
        last = self.records[-1][1] if self.records else 0
        return max(self.rollup_entry, last)

    def slashable_at(self, height: int) -> list:
        return sorted({v for h, v in self.slash_log if h <= height})

    def withdrawal_granted(self, v: int) -> bool:
        """Grant conditions: request in CP, a checkpoint covering it k deep, no evidence against v."""
        if v in self.implicated or self.stalled:
            return False
        if self.baseline:
            return self.ctx.info(self.L[-1]).request_depth(v) is not None
        depth = self.cp_info.request_depth(v)
        if depth is None:
            return False
        tip = self.confirmed_len - 1
        return any(end >= depth and height + self.ctx.k <= tip for end, height in self.records)

    # -- main entry --------------------------------------------------------

    def update(self, slot: int) -> None:
        if not self.baseline:
            self._read_bitcoin(slot)
            if self.stalled:
                self._resolve_sightings(slot)
            self._recompute_output()
        else:
            # stake (and thus who is still slashable) is read off the chosen chain
            self._recompute_output()
            self._local_forensics()
        self._track_withdrawals()
        self.changed = False

    def due_submissions(self, slot: int) -> list[BtcTx]:
        out, keep = [], []
        for due, what in self.outbox:
            if due > slot:
                keep.append((due, what))
                continue
            tx = self.tip_checkpoint_tx(slot)
            if tx is not None:
                out.append(tx)
        self.outbox = keep
        return out

    def tip_checkpoint_tx(self, slot: int) -> Optional[BtcTx]:
        tip = self.L[-1]
        el = self.ctx.get(tip)
        qc = self.qcs.get(tip)
        if el.is_bundle or qc is None:
            return None
        return checkpoint_tx(make_checkpoint(el, qc.sigs, qc.active_set), self.party, slot)

    # -- Bitcoin processing -------------------------------------------------

    def _read_bitcoin(self, slot: int) -> None:
        ledger = self.ctx.ledger
        length = ledger.view_len(self.party, slot, self.lag)
        if length != self.confirmed_len:
            for h in range(self.confirmed_len, length):
                self.confirmed_at[h] = slot
            self.confirmed_len = length
            self._emit("btc_view", length=length)
        while self.next_height < self.confirmed_len:
            block = ledger.blocks[self.next_height]
            while self.tx_index < len(block.txs):
                if not self._process(block.txs[self.tx_index], block.height, slot):
                    return
                self.tx_index += 1
            self._after_block(block.height)
            self.next_height += 1
            self.tx_index = 0

    def _process(self, tx: BtcTx, height: int, slot: int) -> bool:
        if tx.kind == "fraud_proof":
            self._on_fraud_proof(tx)
        elif tx.kind == "liveness":
            self._on_liveness(tx, height)
        elif tx.kind == "checkpoint":
            return self._on_checkpoint(tx, height, slot)
        elif tx.kind == "bundle_checkpoint":
            return self._on_bundle_checkpoint(tx, height)
        return True

    def _on_fraud_proof(self, tx: BtcTx) -> None:
        payload = tx.payloads[0] if tx.payloads else b""
        if payload[:4] != FRAUD_TAG:
            return
        fp = self.ctx.store.get(payload[4:])
        if not isinstance(fp, FraudProof):
            return
        if not verify_fraud_proof(fp, self.ctx.tree, self.ctx.registry):
            return
        self._slash(fp.violators, "fraud_proof")

    def _on_liveness(self, tx: BtcTx, height: int) -> None:
        payload = tx.payloads[0] if tx.payloads else b""
        if payload[:4] != LIVENESS_TAG or self.stalled:
            return
        target = self.ctx.store.get(payload[4:])
        if isinstance(target, Tx):
            self.triggers.append(Trigger(target.txid, height))

    def _decode(self, tx: BtcTx, bundle: bool):
        if len(tx.payloads) != 2:
            return None
        try:
            return decode_op_return(tx.payloads[0], tx.payloads[1], self.ctx.n, bundle=bundle)
        except ValueError:
            return None

    def _on_checkpoint(self, tx: BtcTx, height: int, slot: int) -> bool:
        cp = self._decode(tx, bundle=False)
        if cp is None:
            return True
        if self.stalled:
            self.sightings.append(_Sighting(cp, height))
            return True
        if self.mode == ROLLUP and self.rollup_bundles:
            return True
        tip = self.cp[-1]
        e_exp = self.expected_epoch()
        active = self.ctx.sets.active_set(tip, e_exp)
        if not checkpoint_valid(cp, e_exp, active, self.slashable, self.ctx.registry):
            self._skipped(cp, height, "invalid for the expected epoch")
            return True
        path, anchor = self._available_path(cp.block_hash)
        if path is None:
            if slot < self.confirmed_at[height] + self.ctx.delta:
                return False
            self._emergency_break(cp, height, slot)
            return True
        target = self.ctx.get(cp.block_hash)
        sighting = _Sighting(cp, height)
        if self._resolve(sighting):
            self._record_sighting(sighting)
        if path and anchor == tip and target.epoch == e_exp:
            self._extend_cp(path, height)
            if self.mode == ROLLUP:
                # the freeze-time tip checkpoint lands after the rollup prefix;
                # bundles then build on it instead of orphaning output blocks
                self.rollup_epoch = self.expected_epoch()
        elif not path:
            self._skipped(cp, height, "does not extend the checkpointed chain")
        return True

    def _skipped(self, cp, height: int, reason: str) -> None:
        if self.traced and cp.block_hash not in self.cp:
            self._emit("checkpoint_skipped", block=short(cp.block_hash), btc_height=height,
                       reason=reason)

    def _on_bundle_checkpoint(self, tx: BtcTx, height: int) -> bool:
        if self.stalled or self.mode != ROLLUP:
            return True
        bcp = self._decode(tx, bundle=True)
        if bcp is None:
            return True
        tip = self.cp[-1]
        active = self.ctx.sets.active_set(tip, self.rollup_epoch)
        if not bundle_checkpoint_valid(bcp, self.rollup_epoch, active, self.slashable,
                                       self.ctx.registry):
            return True
        bundle = self.ctx.get(bcp.bundle_hash)
        if bcp.bundle_hash not in self.known or bundle is None or not bundle.is_bundle:
            return False
        if bundle.parent == tip and bundle.epoch == self.rollup_epoch:
            self._extend_cp([bundle.hash], height)
            self.rollup_bundles += 1
            self._emit("bundle_appended", bundle=short(bundle.hash), txs=len(bundle.txs))
        return True

    def _available_path(self, target: bytes):
        path = []
        cur = target
        while cur not in self.cp_pos:
            el = self.ctx.get(cur)
            if el is None or el.is_bundle or not self.final_and_available(cur):
                return None, None
            path.append(cur)
            cur = el.parent
        path.reverse()
        return path, cur

    def _extend_cp(self, path: list, height: int) -> None:
        old = list(self.cp)
        for h in path:
            self.cp_pos[h] = len(self.cp)
            self.cp.append(h)
        self.records.append((len(self.cp) - 1, height))
        self._emit_diff("cp", old, self.cp)

    def _emergency_break(self, cp, height: int, slot: int) -> None:
        self.stalled = True
        self.sightings.append(_Sighting(cp, height))
        self.outbox.append((slot + 2 * self.ctx.delta, "tip"))
        self._emit("emergency_break", checkpoint=short(cp.block_hash), epoch=cp.epoch,
                   btc_height=height)

    # -- evidence ----------------------------------------------------------

    def _resolve(self, s: _Sighting) -> bool:
        if s.resolved:
            return True
        target = self.ctx.get(s.cp.block_hash)
        if target is None or target.is_bundle or s.cp.block_hash not in self.known:
            return False
        active = self.ctx.active_for(target)
        if target.epoch != s.cp.epoch or len(s.cp.bitmap) != bitmap_len(len(active)):
            return False
        signers = frozenset(signers_of(s.cp, active))
        registry = self.ctx.registry
        if len(signers) < quorum(len(active)) or not all(registry.has_signed(v, s.cp.block_hash)
                                                         for v in signers):
            return False
        s.epoch, s.active, s.signers, s.resolved = target.epoch, active, signers, True
        return True

    def _record_sighting(self, s: _Sighting) -> None:
        tree = self.ctx.tree
        for other in self.sightings:
            if (other.resolved and other.epoch == s.epoch and other.active == s.active
                    and tree.conflicts(other.cp.block_hash, s.cp.block_hash)):
                self._slash(other.signers & s.signers, "checkpoints")
        if s not in self.sightings:
            self.sightings.append(s)

    def _resolve_sightings(self, slot: int) -> None:
        for s in list(self.sightings):
            if not s.resolved and self._resolve(s):
                self.sightings.remove(s)
                self._record_sighting(s)

    def _slash(self, violators, source: str) -> None:
        violators = set(violators)
        self.implicated |= violators
        fresh = violators - self.slashable - self.withdrawn
        if fresh:
            self.slashable |= fresh
            self.slash_log.extend((self.next_height, v) for v in sorted(fresh))
            self._emit("slashable_added", validators=sorted(fresh), source=source)

    def _local_forensics(self) -> None:
        while self._conflict_cursor < len(self.conflicts):
            qa, qb = self.conflicts[self._conflict_cursor]
            self._conflict_cursor += 1
            try:
                fp = forensic_identify(qa, qb, self.ctx.tree)
            except (NotAViolationError, EpochMismatchError):
                continue
            self._slash(fp.violators, "forensics")

    # -- liveness modes ----------------------------------------------------

    def _after_block(self, height: int) -> None:
        if self.stalled:
            return
        k = self.ctx.k
        if self.mode == ROLLUP:
            # a stale trigger would end the rollup at once; count from where a
            # fresh trigger would sit instead
            start = max(self.anchor.height, self.rollup_entry - 2 * k)
            if height - start >= self.ctx.t_btc:
                self.anchor.resolved = True
                self.anchor = None
                self.mode = NORMAL
                self.rollups += 1
                self.exit_slot = self.ctx.slot
                self._emit("mode_change", mode=NORMAL, btc_height=height)
            return
        in_cp = self.cp_info.txids
        pressing = False
        for t in self.triggers:
            if t.resolved:
                continue
            if t.txid in in_cp:
                t.resolved = True
                continue
            depth = height - t.height
            if depth >= 2 * k:
                self.mode = ROLLUP
                self.anchor = t
                self.rollup_epoch = self.expected_epoch()
                self.rollup_entry = height
                self.rollup_bundles = 0
                self._emit("mode_change", mode=ROLLUP, btc_height=height, epoch=self.rollup_epoch,
                           tx=t.txid)
                return
            if depth >= k:
                pressing = True
        if pressing and self.mode == NORMAL:
            self.mode = FROZEN
            self.outbox.append((self.ctx.slot, "tip"))
            self._emit("mode_change", mode=FROZEN, btc_height=height)
        elif not pressing and self.mode == FROZEN:
            self.mode = NORMAL
            self._emit("mode_change", mode=NORMAL, btc_height=height)

    # -- output ------------------------------------------------------------

    def _longest_final(self) -> list:
        g = self.ctx.genesis.hash
        best: list[list] = [[g]]
        stack = [[g]]
        while stack:
            chain = stack.pop()
            kids = self.children(chain[-1])
            for kid in kids:
                stack.append(chain + [kid])
            if not kids:
                if len(chain) > len(best[0]):
                    best = [chain]
                elif len(chain) == len(best[0]) and chain != best[0]:
                    best.append(chain)
        if len(best) == 1:
            return best[0]
        # stay on the current branch when it is among the longest
        mine = [c for c in best if is_prefix(self.L, c)]
        if len(mine) == 1:
            return mine[0]
        best = mine or best
        best.sort(key=lambda c: c[-1])
        if self.rng is not None:
            pick = self.rng.randrange(len(best))
            if not self._hazard_seen:
                self._hazard_seen = True
                self._emit("safety_hazard", tips=[short(c[-1]) for c in best],
                           chosen=short(best[pick][-1]))
            return best[pick]
        return best[0]

    def _recompute_output(self) -> None:
        old = self.L
        if self.baseline:
            new = self._longest_final()
            if is_prefix(new, old):
                new = old
        elif self.finality == "slow" or self.mode == ROLLUP:
            new = slow_finality_output(self.cp)
        elif self.stalled or self.mode == FROZEN:
            new = self.cp if is_prefix(old, self.cp) else old
        else:
            cand = extend_to_pos_chain(self.children, self.cp)
            new = old if is_prefix(cand, old) else cand
        if new is not old and new != old:
            self.L = list(new)
            self._emit_diff("output", old, self.L)

    def _track_withdrawals(self) -> None:
        if not self.traced:
            return
        for v in sorted(self.withdrawn - self._withdrawn_seen):
            self._withdrawn_seen.add(v)
            self._emit("withdrawn", validator=v)
        info = self.ctx.info(self.L[-1] if self.baseline else self.cp[-1])
        for v, _ in info.requests:
            if v not in self.granted and self.withdrawal_granted(v):
                self.granted.add(v)
                self._emit("withdrawal_granted", validator=v)


def check_withdrawal_grant(v: int, client: ClientState, slot: int) -> bool:
    return client.withdrawal_granted(v)
