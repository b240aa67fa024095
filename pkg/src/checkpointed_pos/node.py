"""Validator nodes.

An honest validator proposes on the tip of its own output chain, pre-commits
at most once per parent and keeps its signatures inside an epoch on one chain.
It posts checkpoints for epoch-final blocks, fraud proofs for conflicting
certificates and liveness transactions for stuck transactions. In rollup mode
it builds, signs and checkpoints bundles.

Adversarial puppets run the same code with a ``policy`` other than
``honest``: ``follow`` behaves honestly, ``lazy`` proposes empty blocks and
never votes, ``silent`` does nothing, and ``censor`` refuses to finalize
blocks carrying targeted transactions or above a halt height.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

from .checkpoint import QuorumError, make_bundle_checkpoint, make_checkpoint
from .client import ClientState, ROLLUP, FROZEN, checkpoint_tx, fraud_proof_tx, liveness_tx
from .crypto import KeyErasedError, digest
from .pos import (EpochMismatchError, NotAViolationError, Tx, bundle_quorum, forensic_identify,
                  is_epoch_end, make_block, make_bundle, proposer_for)

if TYPE_CHECKING:
    from .sim import World

POLICIES = ("honest", "follow", "lazy", "silent", "censor")


class Validator:
    def __init__(self, vid: int, world: "World", policy: str = "honest", lag: int = 0) -> None:
        if policy not in POLICIES:
            raise ValueError(f"unknown validator policy {policy!r}")
        self.vid = vid
        self.party = f"v{vid}"
        self.world = world
        self.ctx = world.ctx
        self.policy = policy
        self.holder = self.party if policy == "honest" else "adv"
        self.view = ClientState(self.party, self.ctx, "fast", lag=lag, baseline=world.baseline)
        self.mempool: dict[str, tuple[Tx, int]] = {}
        self.pending: list[tuple] = []
        self.bundles: list = []
        self.proposed: set[bytes] = set()
        self.voted_parent: dict[bytes, bytes] = {}
        self.epoch_last: dict[int, bytes] = {}
        self.checkpointed: set[bytes] = set()
        self.fraud_sent: set[bytes] = set()
        self.liveness_sent: set[str] = set()
        self.bundle_parents: set[tuple] = set()
        self.bundle_signed: set[tuple] = set()
        self.bundle_cps: set[tuple] = set()
        self.censor: frozenset = frozenset()
        self.halt_above: Optional[int] = None
        self.skip_heights: set[int] = set()
        self.was_active = False
        self.exited = False
        self._fp_cursor = 0
        self._probed: dict[tuple, int] = {}
        self.last_vote = None
        self._beat = 0

    @property
    def honest(self) -> bool:
        return self.policy == "honest"

    @property
    def key(self):
        return self.ctx.registry.key(self.vid)

    def add_tx(self, tx: Tx, slot: int) -> None:
        self.mempool.setdefault(tx.txid, (tx, slot))

    # -- per-slot behaviour -------------------------------------------------

    def step(self, slot: int) -> None:
        view = self.view
        for el in view.inbox_elements:
            (self.bundles if el.is_bundle else self.pending).append((el, view.known[el.hash]))
        view.inbox_elements.clear()
        if self.exited or self.policy == "silent":
            return
        if self.policy == "lazy":
            self._propose(slot, empty=True)
            return
        if not self.world.baseline:
            self._post_fraud_proofs(slot)
            self._post_checkpoints(slot)
            if self.policy != "censor":
                self._post_liveness(slot)
        if view.stalled or view.mode == FROZEN:
            return
        if view.mode == ROLLUP:
            if self.policy != "censor":
                self._rollup_step(slot)
            return
        self._propose(slot)
        self._vote(slot)
        self._heartbeat(slot)

    def _heartbeat(self, slot: int) -> None:
        """Re-send the latest vote now and then so a stalled chain does not leak this validator."""
        after = self.ctx.leak_after
        if after is None or self.last_vote is None or slot - self._beat < max(1, after // 3):
            return
        self._beat = slot
        self.world.publish(("vote", self.last_vote), self)

    def after_update(self, slot: int) -> None:
        """Client-phase bookkeeping: scheduled submissions and leaving the active set."""
        for tx in self.view.due_submissions(slot):
            if not self.exited and self.policy not in ("silent", "lazy"):
                self.world.submit_btc(tx, slot)
        if self.exited:
            return
        tip = self.ctx.get(self.view.L[-1])
        if tip.hash == self.ctx.genesis.hash:
            active = self.ctx.sets.after(tip.hash).active
        else:
            active = self.ctx.active_for(tip)
        if self.vid in active:
            self.was_active = True
        elif self.was_active and self.vid in self.ctx.info(tip.hash).withdrawn:
            self.exited = True
            if self.honest:
                self.world.transfer_key(self.vid, tip.epoch)

    # -- BFT round abstraction -------------------------------------------------

    def _propose(self, slot: int, empty: bool = False) -> None:
        tip = self.view.L[-1]
        leaks = self._inactive(tip, slot)
        if tip in self.proposed and (not leaks or (tip, "leak") in self.proposed):
            return
        height, epoch = self.ctx.child_position(tip)
        voting = self._voting(tip, epoch, leaks)
        if self.vid not in voting or proposer_for(voting, height) != self.vid:
            return
        if height in self.skip_heights or (self.halt_above is not None and height > self.halt_above):
            return
        txs = [] if empty else self._select_txs(tip)
        txs += [Tx(f"leak{v}", "leak", v) for v in leaks]
        block = make_block(tip, height, epoch, txs, self.vid, self.ctx.store)
        self.proposed.add(tip)
        if leaks:
            self.proposed.add((tip, "leak"))
        self.world.publish(("block", block), self)
        self.pending.append((block, slot))

    def _voting(self, parent: bytes, epoch: int, leaks=()) -> tuple:
        active = self.ctx.sets.active_set(parent, epoch)
        if self.ctx.leak_after is None:
            return active
        gone = self.ctx.info(parent).leaked | set(leaks)
        return tuple(v for v in active if v not in gone)

    def _inactive(self, parent: bytes, slot: int, slack: int = 0) -> list:
        """Active validators silent for ``leak_after`` slots (minus ``slack``); empty unless leaking."""
        after = self.ctx.leak_after
        if after is None:
            return []
        _, epoch = self.ctx.child_position(parent)
        return [v for v in self._voting(parent, epoch)
                if v != self.vid and slot - self.view.last_active.get(v, 0) >= after - slack]

    def _select_txs(self, tip: bytes) -> list:
        info = self.ctx.info(tip)
        txs = [tx for tx, _ in self.mempool.values()
               if tx.txid not in info.txids and tx.txid not in self.censor]
        for v, _ in info.requests:
            wid = f"w{v}"
            if v not in info.withdrawn and wid not in info.txids and self.view.withdrawal_granted(v):
                txs.append(Tx(wid, "withdraw", v))
        return txs

    def _vote(self, slot: int) -> None:
        if self.policy == "lazy":
            return
        view = self.view
        tip = view.L[-1]
        keep = []
        for block, received in self.pending:
            if block.hash in view.qcs:
                continue
            if block.parent != tip:
                # still votable once the output chain grows to its parent
                if self.ctx.tree.depth[block.hash] >= len(view.L):
                    keep.append((block, received))
                continue
            verdict = self._eligible(block, received, slot)
            if verdict == "wait":
                keep.append((block, received))
            elif verdict == "yes":
                self._sign_block(block)
        self.pending = keep

    def _eligible(self, block, received: int, slot: int) -> str:
        tip = block.parent
        leaks = [tx.subject for tx in block.txs if tx.kind == "leak"]
        if leaks and not self._leak_ok(block, leaks, slot):
            return "no"
        # a leak block may replace a sibling that never finalized
        revote = leaks and tip in self.voted_parent and self.voted_parent[tip] not in self.view.qcs \
            and (tip, "leak") not in self.voted_parent
        if tip in self.voted_parent and not revote:
            return "no"
        height, epoch = self.ctx.child_position(tip)
        if (block.height, block.epoch) != (height, epoch):
            return "no"
        voting = self._voting(tip, epoch, leaks)
        if self.vid not in voting or block.proposer != proposer_for(voting, height):
            return "no"
        last = self.epoch_last.get(epoch)
        if last is not None and not revote and not self.ctx.tree.is_ancestor(last, block.hash):
            return "no"
        if self.halt_above is not None and height > self.halt_above:
            return "wait"
        info = self.ctx.info(tip)
        seen = set()
        waiting = False
        for tx in block.txs:
            if tx.txid in self.censor:
                return "wait"
            if tx.txid in info.txids or tx.txid in seen:
                return "no"
            seen.add(tx.txid)
            if tx.kind == "slash":
                return "no"
            if tx.kind == "withdraw":
                waiting = True
        if waiting:
            if slot < received + self.ctx.delta:
                return "wait"
            if not all(self.view.withdrawal_granted(tx.subject) for tx in block.txs
                       if tx.kind == "withdraw"):
                return "no"
        return "yes"

    def _leak_ok(self, block, leaks: list, slot: int) -> bool:
        inactive = set(self._inactive(block.parent, slot, slack=self.ctx.delta))
        return all(v in inactive for v in leaks)

    def _sign_block(self, block) -> None:
        try:
            sig = self.ctx.registry.sign_digest(self.holder, self.key, block.hash)
        except KeyErasedError:
            return
        if block.parent in self.voted_parent:
            self.voted_parent[(block.parent, "leak")] = block.hash
        self.voted_parent[block.parent] = block.hash
        self.epoch_last[block.epoch] = block.hash
        self.last_vote, self._beat = sig, self.ctx.slot
        self.world.publish(("vote", sig), self)

    # -- Bitcoin submissions -------------------------------------------------

    def _post_checkpoints(self, slot: int) -> None:
        view = self.view
        for h in view.L:
            if h in self.checkpointed:
                continue
            el = self.ctx.get(h)
            if el.is_bundle or el.height == 0 or not is_epoch_end(el.height, self.ctx.epoch_len):
                continue
            qc = view.qcs.get(h)
            if qc is None:
                continue
            self.checkpointed.add(h)
            self.world.submit_btc(checkpoint_tx(make_checkpoint(el, qc.sigs, qc.active_set),
                                                self.party, slot), slot)

    def _post_fraud_proofs(self, slot: int) -> None:
        conflicts = self.view.conflicts
        while self._fp_cursor < len(conflicts):
            qa, qb = conflicts[self._fp_cursor]
            self._fp_cursor += 1
            try:
                fp = forensic_identify(qa, qb, self.ctx.tree)
            except (NotAViolationError, EpochMismatchError):
                continue
            key = digest(fp.serialize())
            if key not in self.fraud_sent:
                self.fraud_sent.add(key)
                self.world.submit_btc(fraud_proof_tx(fp, self.ctx, self.party, slot), slot)

    def _post_liveness(self, slot: int) -> None:
        view = self.view
        if view.mode == ROLLUP:
            return
        for txid, (tx, injected) in self.mempool.items():
            # the PoS chain does not run during a rollup, so the timer restarts at exit
            start = max(injected, view.exit_slot)
            if txid in self.liveness_sent or slot < start + self.world.cfg.t_tm:
                continue
            if view.in_output(txid):
                continue
            self.liveness_sent.add(txid)
            self.world.submit_btc(liveness_tx(tx, self.ctx, self.party, slot), slot)

    # -- rollup mode -------------------------------------------------------

    def canonical_bundle(self, cutoff: int):
        """The bundle every honest validator derives from the Bitcoin prefix ending at ``cutoff``."""
        view = self.view
        tip = view.cp[-1]
        cutoff_slot = self.ctx.ledger.blocks[cutoff].produced_at
        info = view.cp_info
        txs = [tx for tx, injected in sorted(self.mempool.values(), key=lambda p: (p[1], p[0].txid))
               if injected <= cutoff_slot and tx.txid not in info.txids]
        for v in view.slashable_at(cutoff):
            sid = f"s{v}"
            if v not in info.slashed and sid not in info.txids:
                txs.append(Tx(sid, "slash", v))
        if not txs and self.ctx.get(tip).is_bundle:
            return None
        return make_bundle(tip, view.rollup_epoch, txs, self.ctx.store)

    def _rollup_step(self, slot: int) -> None:
        view = self.view
        tip = view.cp[-1]
        active = self.ctx.sets.active_set(tip, view.rollup_epoch)
        if self.vid not in active:
            return
        # one bundle per parent and rollup; a parent can recur in a later rollup
        key = (tip, view.rollup_entry)
        if key not in self.bundle_parents:
            # Probe cutoffs in Bitcoin order; the first one yielding a bundle is the
            # same for every honest validator, whatever its lag.
            start = max(view.bundle_cutoff(), self._probed.get(key, -1) + 1)
            for cutoff in range(start, view.next_height):
                self._probed[key] = cutoff
                bundle = self.canonical_bundle(cutoff)
                if bundle is not None:
                    self.bundle_parents.add(key)
                    self._form_bundle(bundle, slot)
                    break
        self._checkpoint_bundles(slot, tip, active)

    def _form_bundle(self, bundle, slot: int) -> None:
        self.world.publish(("bundle", bundle), self, announce=bundle.hash not in self.ctx.tree)
        self.bundles.append((bundle, slot))
        if (bundle.parent, bundle.epoch) in self.bundle_signed:
            return
        self.bundle_signed.add((bundle.parent, bundle.epoch))
        try:
            sig = self.ctx.registry.sign_digest(self.holder, self.key, bundle.hash)
        except KeyErasedError:
            return
        self.world.publish(("bundle_sig", sig), self)

    def _checkpoint_bundles(self, slot: int, tip: bytes, active: tuple) -> None:
        view = self.view
        for bundle, _ in self.bundles:
            key = (bundle.hash, view.rollup_entry)
            if bundle.parent != tip or bundle.epoch != view.rollup_epoch or key in self.bundle_cps:
                continue
            sigs = [s for v, s in view.bundle_sigs.get(bundle.hash, {}).items()
                    if v in active and v not in view.slashable]
            if len(sigs) < bundle_quorum(len(active)):
                continue
            try:
                bcp = make_bundle_checkpoint(bundle, sigs, active)
            except QuorumError:
                continue
            self.bundle_cps.add(key)
            self.world.submit_btc(checkpoint_tx(bcp, self.party, slot, bundle=True), slot)
