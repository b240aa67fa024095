"""Slot-driven run loop wiring validators, clients, network, Bitcoin and the adversary.

Each slot runs, in order: message deliveries, environment transaction
injection, validator steps (in id order) and the adversary's step, Bitcoin
block production, then every client's view update with its scheduled
Bitcoin submissions, then late joins.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .btc import BtcLedger, BtcTx, r_fin
from .client import ClientState
from .context import Context
from .crypto import short
from .network import ConfigurationError, Network
from .node import Validator
from .pos import Tx
from .trace import Trace


def party_rng(seed: int, party: str) -> random.Random:
    """Independent stream per party so adding one party never perturbs another."""
    return random.Random(int.from_bytes(hashlib.sha256(f"{seed}:{party}".encode()).digest()[:8], "big"))


@dataclass(frozen=True)
class SimConfig:
    n: int = 4
    delta: int = 2
    epoch_len: int = 4
    k: int = 2
    btc_interval: int = 2
    seed: int = 0
    adversary_ids: frozenset = frozenset()
    t_fin_budget: Optional[int] = None
    t_tm: Optional[int] = None
    t_btc: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("n", "delta", "epoch_len", "k", "btc_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        object.__setattr__(self, "adversary_ids", frozenset(self.adversary_ids))
        if self.t_fin_budget is None:
            # f lazy proposers in a row, one honest block (with a possible withdrawal wait),
            # then the certificate reaching every client.
            object.__setattr__(self, "t_fin_budget",
                               (self.n // 3 + 2) * (3 * self.delta + 1) + 2 * self.delta)
        if self.t_tm is None:
            object.__setattr__(self, "t_tm", self.t_fin_budget)
        if self.t_btc is None:
            per_round = math.ceil((3 * self.delta + 1) / self.btc_interval)
            object.__setattr__(self, "t_btc", 3 * self.k + 2 + 2 * per_round)
        if self.t_btc <= 2 * self.k:
            raise ConfigurationError("t_btc must exceed 2k")

    @property
    def r_fin(self) -> int:
        return r_fin(self.k, self.btc_interval, self.delta)

    @property
    def rollup_bound(self) -> int:
        return 3 * self.delta + 4 * self.r_fin + self.t_tm

    @property
    def epoch_duration(self) -> int:
        return self.epoch_len * (3 * self.delta + 1)

    @property
    def slow_bound(self) -> int:
        return self.epoch_duration + self.r_fin + 2 * self.t_fin_budget

    def bounds(self) -> dict:
        return {"t_fin_budget": self.t_fin_budget, "rollup": self.rollup_bound,
                "slow": self.slow_bound, "r_fin": self.r_fin, "t_tm": self.t_tm,
                "t_btc": self.t_btc, "epoch_duration": self.epoch_duration}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adversary_ids"] = sorted(self.adversary_ids)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ClientSpec:
    name: str
    finality: str = "fast"
    lag: Optional[int] = 0
    join: int = 0


@dataclass
class Scenario:
    """A fully specified run: parameters, parties, workload and adversary."""

    name: str
    cfg: SimConfig
    horizon: int
    clients: list = field(default_factory=list)
    injections: list = field(default_factory=list)
    queue: tuple = ()
    standby: tuple = ()
    extra_adversary_ids: tuple = ()
    strategy: str = "follow"
    params: dict = field(default_factory=dict)
    network: object = "uniform"
    inclusion: str = "prompt"
    validator_lag: str = "random"
    baseline: bool = False
    keys_erased: bool = False
    leak_after: Optional[int] = None
    expect: dict = field(default_factory=dict)
    checks: tuple = ()

    def __post_init__(self) -> None:
        ids = set(range(self.cfg.n)) | set(self.queue) | set(self.standby)
        if not set(self.cfg.adversary_ids) <= ids:
            raise ConfigurationError("adversary ids must name validators")
        names = [c.name for c in self.clients]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate client names")
        for slot, _ in self.injections:
            if not 0 <= slot <= self.horizon:
                raise ConfigurationError(f"injection slot {slot} outside the horizon")


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    world: "World"


class World:
    def __init__(self, scenario: Scenario) -> None:
        from .adversary import make_strategy

        self.scenario = scenario
        self.cfg = cfg = scenario.cfg
        self.baseline = scenario.baseline
        self.trace = Trace()
        self.adv_rng = party_rng(cfg.seed, "adv")
        self.ledger = BtcLedger(cfg.k, cfg.btc_interval, cfg.delta, scenario.inclusion,
                                party_rng(cfg.seed, "btc"))
        self.ctx = Context(cfg.n, cfg.delta, cfg.epoch_len, cfg.k, cfg.t_btc, self.ledger,
                           tuple(range(cfg.n)), tuple(scenario.queue), scenario.keys_erased,
                           self.trace)
        self.ctx.leak_after = scenario.leak_after if scenario.baseline else None
        self.network = Network(cfg.delta, scenario.network, self.adv_rng)
        self.parties: dict[str, object] = {}
        self.validators: dict[int, Validator] = {}
        for vid in list(range(cfg.n)) + list(scenario.queue) + list(scenario.standby):
            bad = vid in cfg.adversary_ids
            self.ctx.registry.register(vid, "adv" if bad else f"v{vid}")
            v = Validator(vid, self, "follow" if bad else "honest", self._validator_lag())
            self.validators[vid] = v
            self._attach(v.party, v.view)
        for vid in scenario.extra_adversary_ids:
            self.ctx.registry.register(vid, "adv")
        self.clients: dict[str, ClientState] = {}
        self.client_specs = {c.name: c for c in scenario.clients}
        self.lags = {}
        for spec in scenario.clients:
            self.lags[spec.name] = self._lag(spec.lag)
            if spec.join == 0:
                self._add_client(spec)
        self.adversary = make_strategy(scenario.strategy, self, **scenario.params)
        self._attach("adv", self.adversary.view)
        self.adversary.setup()
        self._injections: dict[int, list] = {}
        for slot, tx in scenario.injections:
            self._injections.setdefault(slot, []).append(tx)

    # -- construction helpers -------------------------------------------

    def _lag(self, lag: Optional[int]) -> int:
        if lag is None:
            return self.adv_rng.randint(0, self.cfg.delta)
        return max(0, min(lag, self.cfg.delta))

    def _validator_lag(self) -> int:
        mode = self.scenario.validator_lag
        if mode == "zero":
            return 0
        if mode == "max":
            return self.cfg.delta
        return self.adv_rng.randint(0, self.cfg.delta)

    def _attach(self, party: str, knowledge) -> None:
        self.parties[party] = knowledge
        self.network.register(party)

    def _add_client(self, spec: ClientSpec) -> ClientState:
        client = ClientState(spec.name, self.ctx, spec.finality, lag=self.lags[spec.name],
                             baseline=self.baseline, traced=True,
                             rng=party_rng(self.cfg.seed, spec.name))
        self.clients[spec.name] = client
        self._attach(spec.name, client)
        return client

    @property
    def honest_validators(self) -> list:
        return sorted(v for v, node in self.validators.items() if node.honest)

    # -- services used by parties ------------------------------------------

    def publish(self, payload: tuple, sender, announce: bool = True, recipients=None,
                delays: Optional[dict] = None, private: bool = False) -> dict:
        slot = self.ctx.slot
        node = sender if isinstance(sender, Validator) else None
        party = node.party if node else sender
        honest = node is not None and node.honest
        kind = payload[0]
        ref = None
        if kind in ("block", "bundle"):
            el = payload[1]
            ref = el.hash
            fresh = el.hash not in self.ctx.tree
            self.ctx.add(el)
            if announce and fresh:
                self.announce(el, party, private=private)
        elif kind in ("vote", "bundle_sig"):
            ref = payload[1].message
        if not honest and delays is None:
            delays = self.adversary.route(payload, party)
        msg = self.network.message(payload, party, slot, honest)
        schedule = self.network.schedule_broadcast(msg, recipients, delays)
        detail = {"mid": msg.mid, "what": kind, "ref": short(ref) if ref else None,
                  "honest": honest, "deliver": schedule}
        if kind in ("vote", "bundle_sig"):
            detail["signer"] = payload[1].signer
        self.trace.emit(slot, party, "send", **detail)
        if node is not None:
            node.view.receive(payload, slot)
        return schedule

    def announce(self, el, party: str, private: bool = False) -> None:
        self.ctx.add(el)
        detail = {"hash": short(el.hash), "parent": short(el.parent), "epoch": el.epoch,
                  "txs": [tx.txid for tx in el.txs], "kinds": [tx.kind for tx in el.txs],
                  "subjects": [tx.subject for tx in el.txs]}
        if el.is_bundle:
            self.trace.emit(self.ctx.slot, party, "bundle", **detail)
        else:
            detail.update(height=el.height, proposer=el.proposer, private=private)
            self.trace.emit(self.ctx.slot, party, "propose", **detail)

    def submit_btc(self, tx: BtcTx, slot: int, target: Optional[int] = None) -> BtcTx:
        if target is None:
            target = self.adversary.btc_target(tx, slot)
        self.ledger.submit(tx, slot, target)
        detail = {"txid": tx.txid, "tx_kind": tx.kind}
        c = tx.content
        if tx.kind in ("checkpoint", "bundle_checkpoint"):
            detail.update(ref=short(c.target), epoch=c.epoch)
        elif tx.kind == "fraud_proof":
            detail.update(violators=sorted(c.violators))
        elif tx.kind == "liveness":
            detail.update(ref=c.txid)
        self.trace.emit(slot, tx.submitter, "btc_submit", **detail)
        return tx

    def transfer_key(self, vid: int, epoch: int) -> None:
        self.ctx.registry.transfer(vid, "adv", epoch)
        self.trace.emit(self.ctx.slot, f"v{vid}", "key_transfer", validator=vid, epoch=epoch)
        self.adversary.acquire(vid)

    def inject(self, tx: Tx, slot: int) -> None:
        for v in self.validators.values():
            v.add_tx(tx, slot)
        self.trace.emit(slot, "env", "inject", tx=tx.txid, tx_kind=tx.kind, subject=tx.subject)
        self.adversary.on_inject(tx, slot)

    # -- the run loop ----------------------------------------------------

    def header(self) -> dict:
        s = self.scenario
        return {
            "scenario": s.name, "config": self.cfg.to_dict(), "horizon": s.horizon,
            "baseline": s.baseline, "strategy": s.strategy,
            "params": {k: v for k, v in s.params.items() if isinstance(v, (int, str, bool, list))},
            "honest_validators": self.honest_validators,
            "adversary_ids": sorted(self.cfg.adversary_ids), "queue": list(s.queue),
            "clients": {c.name: {"finality": c.finality, "lag": self.lags[c.name], "join": c.join}
                        for c in s.clients},
            "bounds": self.cfg.bounds(), "expect": dict(s.expect), "checks": list(s.checks),
            "network": str(self.network.policy.kind), "inclusion": s.inclusion,
        }

    def run(self) -> RunResult:
        self.trace.emit(0, "sim", "config", **self.header())
        for slot in range(self.scenario.horizon + 1):
            self.step(slot)
        self._final()
        return RunResult(self.scenario, self.trace, self)

    def step(self, slot: int) -> None:
        self.ctx.slot = slot
        for party, msg in self.network.due(slot):
            target = self.parties.get(party)
            if target is not None:
                target.receive(msg.payload, slot)
        for tx in self._injections.get(slot, ()):
            self.inject(tx, slot)
        for vid in sorted(self.validators):
            self.validators[vid].step(slot)
        self.adversary.step(slot)
        block = self.ledger.produce_block(slot)
        if block is not None:
            self.trace.emit(slot, "btc", "btc_block", height=block.height,
                            txs=[tx.txid for tx in block.txs])
        for vid in sorted(self.validators):
            node = self.validators[vid]
            node.view.update(slot)
            node.after_update(slot)
        self.adversary.view.update(slot)
        self.adversary.view.inbox_elements.clear()
        for name, client in self.clients.items():
            client.update(slot)
            client.inbox_elements.clear()
            for tx in client.due_submissions(slot):
                self.submit_btc(tx, slot)
        for spec in self.scenario.clients:
            if spec.join == slot and slot > 0:
                self._join(spec, slot)
        self.adversary.after_slot(slot)

    def _join(self, spec: ClientSpec, slot: int) -> None:
        client = self._add_client(spec)
        extra = self.adversary.late_join_extra(spec.name, slot)
        inbox = self.network.late_join(spec.name, slot, extra)
        self.trace.emit(slot, spec.name, "join", messages=len(inbox), extra=len(extra))
        for msg in inbox:
            client.receive(msg.payload, slot)
        client.update(slot)
        client.inbox_elements.clear()

    def _final(self) -> None:
        slot = self.scenario.horizon
        for name, c in self.clients.items():
            self.trace.emit(slot, name, "final", mode=c.mode, stalled=c.stalled,
                            slashable=sorted(c.slashable), cp_len=len(c.cp), l_len=len(c.L),
                            rollups=c.rollups)


def run_scenario(scenario: Scenario) -> RunResult:
    return World(scenario).run()


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, cfg=replace(scenario.cfg, seed=seed))
