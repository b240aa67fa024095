"""Adversary coordinator and scripted attack strategies.

The coordinator holds every corrupted key (registry holder ``"adv"``), sees
all traffic through its own client view and drives its puppet validators by
switching their policy. Attack strategies additionally craft blocks, votes
and Bitcoin transactions of their own.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

from .checkpoint import make_checkpoint
from .client import ClientState, Knowledge, checkpoint_tx
from .crypto import KeyErasedError, short
from .pos import Tx, is_epoch_end, make_block, proposer_for, try_finalize

if TYPE_CHECKING:
    from .sim import World


class Strategy:
    """Base strategy: puppets follow the honest protocol."""

    name = "follow"
    policy = "follow"

    def __init__(self, world: "World", **params) -> None:
        self.world = world
        self.ctx = world.ctx
        self.params = params
        self.keys: set[int] = set(world.cfg.adversary_ids) | set(world.scenario.extra_adversary_ids)
        self.view = ClientState("adv", world.ctx, "fast", lag=0, baseline=world.baseline)
        self._probed = False

    @property
    def puppets(self) -> list:
        return [self.world.validators[v] for v in sorted(self.world.cfg.adversary_ids)
                if v in self.world.validators]

    def setup(self) -> None:
        for p in self.puppets:
            p.policy = self.policy

    def emit(self, kind: str, **detail) -> None:
        self.ctx.trace.emit(self.ctx.slot, "adv", kind, **detail)

    def sign(self, vid: int, h: bytes):
        return self.ctx.registry.sign_digest("adv", self.ctx.registry.key(vid), h)

    # hooks; the defaults leave the honest protocol untouched
    def step(self, slot: int) -> None:
        self._probe(slot)

    def _probe(self, slot: int) -> None:
        """Inject ``probe_tx`` right after a block at ``probe_height`` is proposed.

        The transaction then lands in the following block, which the scenario
        picks to be epoch-final.
        """
        txid = self.params.get("probe_tx")
        if txid is None or self._probed:
            return
        height = self.params["probe_height"]
        if any(getattr(el, "height", -1) == height for el in self.ctx.tree.elements.values()):
            self._probed = True
            self.world.inject(Tx(txid), slot)

    def after_slot(self, slot: int) -> None:
        pass

    def on_inject(self, tx: Tx, slot: int) -> None:
        pass

    def route(self, payload: tuple, party: str) -> Optional[dict]:
        return None

    def btc_target(self, tx, slot: int) -> Optional[int]:
        if self.params.get("slow_liveness") and tx.kind == "liveness":
            return self.world.ledger.inclusion_window(slot)[1]
        return None

    def late_join_extra(self, party: str, slot: int) -> list:
        return []

    def acquire(self, vid: int) -> None:
        self.keys.add(vid)


class Lazy(Strategy):
    """Puppets propose empty blocks and never vote."""

    name = policy = "lazy"


class Silent(Strategy):
    name = policy = "silent"


class Censor(Strategy):
    """Puppets stop finalizing above ``halt_height`` and drop ``targets`` until a rollup ends.

    ``target`` (a txid) is injected once an honest validator has finalized
    ``halt_height``, so it is certain to miss normal-mode finalization.
    """

    name = policy = "censor"

    def setup(self) -> None:
        super().setup()
        for p in self.puppets:
            p.halt_above = self.params.get("halt_height")
            p.censor = frozenset(self.params.get("targets", ()))
        self._target_sent = self.params.get("target") is None

    def step(self, slot: int) -> None:
        self._probe(slot)
        if not self._target_sent:
            halt = self.params.get("halt_height") or 0
            honest = [self.world.validators[v] for v in self.world.honest_validators]
            if any(self.ctx.get(v.view.L[-1]).height >= halt for v in honest if not v.exited):
                self._target_sent = True
                self.world.inject(Tx(self.params["target"]), slot)
        for p in self.puppets:
            if p.policy == "censor" and p.view.rollups > 0:
                p.policy = "follow"
                p.halt_above = None
                p.censor = frozenset()
                self.emit("resume", validator=p.vid)


class DoubleSign(Strategy):
    """The proposer at ``attack_height`` equivocates and every puppet signs both blocks.

    Honest validators and clients are split into two halves. Each half gets
    one block (and the puppets' votes on it) at once and the other only after
    ``cross_delay`` slots, so both blocks finalize in different views.
    Puppets go silent afterwards.
    """

    name = "double_sign"

    def setup(self) -> None:
        super().setup()
        self.height = self.params["attack_height"]
        self.cross = self.params.get("cross_delay", 3 * self.ctx.delta + 2)
        self.done = False
        for p in self.puppets:
            p.skip_heights.add(self.height)

    def step(self, slot: int) -> None:
        if self.done or not self.puppets:
            return
        lead = self.puppets[0].view
        tip = lead.L[-1]
        height, epoch = self.ctx.child_position(tip)
        if height != self.height:
            if height > self.height:
                self.done = True
                self.emit("attack_skipped", reason="height passed")
            return
        active = self.ctx.sets.active_set(tip, epoch)
        proposer = proposer_for(active, height)
        signers = [v for v in active if v in self.keys]
        if proposer not in self.keys:
            self.done = True
            self.emit("attack_skipped", reason="proposer is honest")
            return
        self.done = True
        info = self.ctx.info(tip)
        txs = [tx for tx, _ in self.puppets[0].mempool.values() if tx.txid not in info.txids]
        x = make_block(tip, height, epoch, txs, proposer, self.ctx.store)
        y = make_block(tip, height, epoch, txs + [Tx(f"adv{height}")], proposer, self.ctx.store)
        side_a, side_b = self._halves()
        for block, near, far in ((x, side_a, side_b), (y, side_b, side_a)):
            delays = {p: 1 for p in near} | {p: self.cross for p in far}
            self.world.publish(("block", block), "adv", delays=delays)
            for v in signers:
                self.world.publish(("vote", self.sign(v, block.hash)), "adv", delays=delays)
        self.emit("equivocation", height=height, blocks=[short(x.hash), short(y.hash)],
                  signers=signers)
        for p in self.puppets:
            p.policy = "silent"

    def _halves(self) -> tuple[list, list]:
        honest = [f"v{v}" for v in self.world.honest_validators]
        active = [p for p in honest if int(p[1:]) < self.world.cfg.n]
        rest = [p for p in honest if p not in active]
        half = len(active) // 2
        clients = sorted(self.world.clients)
        a = active[:half] + rest + clients[0::2] + ["adv"]
        b = active[half:] + clients[1::2]
        return a, b


class PrivateChain(Strategy):
    """Finalize and checkpoint a withheld epoch; optionally reveal it later.

    Once the coordinator's checkpointed chain reaches the end of
    ``fork_epoch`` the puppets sign a private next epoch, post its
    checkpoint to Bitcoin and keep following the public chain. At
    ``reveal_at`` the private blocks and votes are broadcast.
    """

    name = "private_chain"

    def setup(self) -> None:
        super().setup()
        self.fork_height = self.params.get("fork_epoch", 1) * self.ctx.epoch_len
        self.reveal_at = self.params.get("reveal_at")
        self.blocks: list = []
        self.votes: list = []
        self.built = False
        self.revealed = False

    def step(self, slot: int) -> None:
        if not self.built:
            tip = self.ctx.get(self.view.cp[-1])
            if not tip.is_bundle and tip.height >= self.fork_height:
                self.built = True
                self._build(slot, tip)
        elif not self.revealed and self.reveal_at is not None and slot >= self.reveal_at:
            self.revealed = True
            for block in self.blocks:
                self.world.publish(("block", block), "adv", announce=False,
                                   delays={p: 1 for p in self.world.parties})
            for sig in self.votes:
                self.world.publish(("vote", sig), "adv", delays={p: 1 for p in self.world.parties})
            self.emit("reveal", blocks=[short(b.hash) for b in self.blocks])

    def _build(self, slot: int, base) -> None:
        parent = base.hash
        last_qc = None
        for _ in range(self.ctx.epoch_len):
            height, epoch = self.ctx.child_position(parent)
            active = self.ctx.sets.active_set(parent, epoch)
            block = make_block(parent, height, epoch, [Tx(f"priv{height}")],
                               proposer_for(active, height), self.ctx.store)
            self.world.announce(block, "adv", private=True)
            sigs = [self.sign(v, block.hash) for v in active if v in self.keys]
            last_qc = try_finalize(block, sigs, active)
            if last_qc is None:
                self.emit("attack_skipped", reason="not enough keys")
                return
            self.blocks.append(block)
            self.votes.extend(sigs)
            parent = block.hash
            if is_epoch_end(height, self.ctx.epoch_len):
                break
        cp = make_checkpoint(self.blocks[-1], last_qc.sigs, last_qc.active_set)
        self.world.submit_btc(checkpoint_tx(cp, "adv", slot), slot,
                              target=self.world.ledger.inclusion_window(slot)[0])
        self.emit("private_epoch", blocks=[short(b.hash) for b in self.blocks],
                  checkpoint=short(cp.block_hash))


class Posterior(Strategy):
    """Rewrite history from genesis with keys of validators that already left.

    The attack chain bonds ``attack_ids`` instead of the canonical newcomers,
    withdraws the old set and is made longer than the canonical chain. It is
    handed to late-joining clients; with ``post_checkpoints`` its checkpoints
    also go to Bitcoin.
    """

    name = "posterior"

    def setup(self) -> None:
        super().setup()
        self.old = tuple(range(self.world.cfg.n))
        self.attack_ids = tuple(self.params.get("attack_ids", ()))
        self.chain: list = []
        self.votes: list = []
        self.done = False

    def ready(self) -> bool:
        return set(self.old) <= self.keys and set(self.old) <= self.view.withdrawn

    def attack(self, slot: int) -> None:
        """Build the rewritten history; done lazily so it outgrows the canonical chain."""
        if self.done or not self.ready():
            return
        self.done = True
        try:
            self._build(slot)
        except KeyErasedError:
            self.chain, self.votes = [], []
            self.emit("attack_failed", reason="keys erased")
            return
        self.emit("attack", blocks=len(self.chain), tip=short(self.chain[-1].hash))

    def _build(self, slot: int) -> None:
        canonical = self.ctx.get(self.view.L[-1]).height
        target = canonical + self.params.get("margin_epochs", 4) * self.ctx.epoch_len
        target -= target % self.ctx.epoch_len
        parent = self.ctx.genesis.hash
        checkpoints = []
        for height in range(1, target + 1):
            _, epoch = self.ctx.child_position(parent)
            active = self.ctx.sets.active_set(parent, epoch)
            if height == 1:
                txs = [Tx(f"xbond{v}", "bond", v) for v in self.attack_ids]
                txs += [Tx(f"xreq{v}", "withdraw_request", v) for v in self.old]
            elif height == self.ctx.epoch_len + 1:
                txs = [Tx(f"xw{v}", "withdraw", v) for v in self.old]
            else:
                txs = []
            block = make_block(parent, height, epoch, txs, proposer_for(active, height),
                               self.ctx.store)
            self.world.announce(block, "adv", private=True)
            sigs = [self.sign(v, block.hash) for v in active if v in self.keys]
            qc = try_finalize(block, sigs, active)
            if qc is None:
                raise KeyErasedError("not enough keys for the attack chain")
            self.chain.append(block)
            self.votes.extend(sigs)
            if is_epoch_end(height, self.ctx.epoch_len):
                checkpoints.append(make_checkpoint(block, qc.sigs, qc.active_set))
            parent = block.hash
        if self.params.get("post_checkpoints"):
            for cp in checkpoints:
                self.world.submit_btc(checkpoint_tx(cp, "adv", slot), slot)

    def late_join_extra(self, party: str, slot: int) -> list:
        self.attack(slot)
        net = self.world.network
        msgs = [net.message(("block", b), "adv", slot, honest=False) for b in self.chain]
        msgs += [net.message(("vote", s), "adv", slot, honest=False) for s in self.votes]
        return msgs


class LeakSplit(Strategy):
    """Silent puppets leak the honest validators out on a private chain.

    With no checkpoints both sides finalize on their own: the honest chain
    after leaking the puppets, the private one after leaking everyone else.
    The private chain is kept as long as the canonical one and shown only to
    clients that join late.
    """

    name = "leak_split"
    policy = "silent"

    def setup(self) -> None:
        super().setup()
        self.chain: list = []
        self.votes: list = []
        self.late: set[str] = set()

    def _extend(self, target: int) -> list:
        fresh = []
        honest = [v for v in range(self.world.cfg.n) if v not in self.keys]
        parent = self.chain[-1].hash if self.chain else self.ctx.genesis.hash
        while len(self.chain) < target:
            height, epoch = self.ctx.child_position(parent)
            leaked = self.ctx.info(parent).leaked
            txs = [Tx(f"xleak{v}", "leak", v) for v in honest if v not in leaked]
            gone = leaked | {tx.subject for tx in txs}
            voting = tuple(v for v in self.ctx.sets.active_set(parent, epoch) if v not in gone)
            if not voting:
                self.emit("attack_skipped", reason="no voting validators left")
                break
            block = make_block(parent, height, epoch, txs, proposer_for(voting, height),
                               self.ctx.store)
            self.world.announce(block, "adv", private=True)
            sigs = [self.sign(v, block.hash) for v in voting if v in self.keys]
            if try_finalize(block, sigs, voting) is None:
                self.emit("attack_skipped", reason="not enough keys")
                break
            self.chain.append(block)
            self.votes.extend(sigs)
            fresh.append((block, sigs))
            parent = block.hash
        return fresh

    def _honest_height(self, know: Knowledge) -> int:
        """Height of the longest final chain in ``know`` that avoids the private chain."""
        mine = {b.hash for b in self.chain}
        best, stack = 0, [(self.ctx.genesis.hash, 0)]
        while stack:
            h, height = stack.pop()
            best = max(best, height)
            stack.extend((kid, height + 1) for kid in know.children(h) if kid not in mine)
        return best

    def late_join_extra(self, party: str, slot: int) -> list:
        # what the joining client will see from honest traffic, so the two chains tie
        probe = Knowledge(party, self.ctx)
        for msg in self.world.network.history:
            if msg.honest and msg.sent_at <= slot:
                probe.receive(msg.payload, slot)
        self.late.add(party)
        self._extend(self._honest_height(probe))
        net = self.world.network
        msgs = [net.message(("block", b), "adv", slot, honest=False) for b in self.chain]
        msgs += [net.message(("vote", s), "adv", slot, honest=False) for s in self.votes]
        return msgs

    def after_slot(self, slot: int) -> None:
        if not self.late:
            return
        target = min(self._honest_height(self.world.clients[p]) for p in self.late)
        for block, sigs in self._extend(target):
            self.world.publish(("block", block), "adv", announce=False, recipients=self.late)
            for sig in sigs:
                self.world.publish(("vote", sig), "adv", recipients=self.late)


STRATEGIES = {cls.name: cls for cls in (Strategy, Lazy, Silent, Censor, DoubleSign, PrivateChain,
                                         Posterior, LeakSplit)}


def make_strategy(name: str, world: "World", **params) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown adversary strategy {name!r}") from None
    return cls(world, **params)
