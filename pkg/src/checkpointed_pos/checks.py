"""Post-hoc property checkers over run traces.

Every checker is a pure function of a :class:`~checkpointed_pos.trace.Trace`
and returns a :class:`Verdict`. Evidence items cite 1-based line numbers of
the NDJSON trace so a failure can be looked up directly.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .trace import Event, Trace

PASS, FAIL, NA = "pass", "fail", "not-applicable"
GENESIS = "genesis"


@dataclass
class Verdict:
    check: str
    result: str
    evidence: list = field(default_factory=list)
    note: str = ""

    def __post_init__(self) -> None:
        if self.result == FAIL and not self.evidence:
            raise ValueError("a failing verdict needs evidence")

    @property
    def passed(self) -> bool:
        return self.result == PASS

    def to_dict(self) -> dict:
        return {"check": self.check, "result": self.result, "note": self.note,
                "evidence": [{"line": line, "what": what} for line, what in self.evidence]}


def _verdict(check: str, evidence: list, note: str = "", limit: int = 20) -> Verdict:
    if evidence:
        return Verdict(check, FAIL, evidence[:limit], note + f" ({len(evidence)} violation(s))")
    return Verdict(check, PASS, [], note)


class ChainReplay:
    """Rebuild per-party chains from ``{keep, add}`` diff events."""

    def __init__(self) -> None:
        self.chains: dict[str, list] = defaultdict(lambda: [GENESIS])

    def apply(self, ev: Event) -> list:
        chain = self.chains[ev.party]
        del chain[ev.detail["keep"]:]
        chain.extend(ev.detail["add"])
        return chain


def compatible(a: list, b: list) -> bool:
    """One chain is a prefix of the other; elements are unique tree nodes."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    return long_[len(short) - 1] == short[-1]


class _Spine:
    """Detects any pair of mutually inconsistent snapshots in one pass.

    Every snapshot is compared with the longest one seen so far; if all are
    compatible with it at the time they appear, all snapshots are pairwise
    prefix-consistent.
    """

    def __init__(self) -> None:
        self.spine: list = [GENESIS]
        self.line = 0

    def offer(self, chain: list, line: int):
        if not compatible(chain, self.spine):
            return self.line
        if len(chain) > len(self.spine):
            self.spine = list(chain)
            self.line = line
        return None


def _numbered(trace: Trace) -> Iterable[tuple[int, Event]]:
    return enumerate(trace.events, start=1)


def check_cp_safety(trace: Trace) -> Verdict:
    hdr = trace.header
    if hdr.get("baseline"):
        return Verdict("cp_safety", NA, note="checkpointing disabled")
    replay, spine, evidence = ChainReplay(), _Spine(), []
    for line, ev in _numbered(trace):
        if ev.kind == "cp":
            chain = replay.apply(ev)
            clash = spine.offer(chain, line)
            if clash is not None:
                evidence.append((line, f"{ev.party} CP conflicts with the snapshot at line {clash}"))
    return _verdict("cp_safety", evidence, "all checkpointed-chain snapshots prefix-consistent")


def check_slashable_safety(trace: Trace) -> Verdict:
    hdr = trace.header
    n = hdr["config"]["n"]
    need = n // 3 + 1
    honest = set(hdr["honest_validators"])
    replay, spine = ChainReplay(), _Spine()
    conflict = None
    slashable: dict[str, set] = defaultdict(set)
    withdrawn: dict[str, set] = defaultdict(set)
    evidence = []
    for line, ev in _numbered(trace):
        if ev.kind == "output":
            clash = spine.offer(replay.apply(ev), line)
            if clash is not None and conflict is None:
                conflict = (line, clash)
        elif ev.kind == "withdrawn":
            withdrawn[ev.party].add(ev.detail["validator"])
        elif ev.kind == "slashable_added":
            for v in ev.detail["validators"]:
                if v in honest:
                    evidence.append((line, f"honest validator {v} slashable for {ev.party}"))
                if v in withdrawn[ev.party]:
                    evidence.append((line, f"validator {v} already withdrawn for {ev.party}"))
                slashable[ev.party].add(v)
    if conflict is not None:
        line, clash = conflict
        for client in hdr["clients"]:
            guilty = slashable[client] - honest
            if len(guilty) < need:
                evidence.append((line, f"outputs conflict (with line {clash}) but {client} has "
                                       f"{len(guilty)} < {need} slashable validators"))
    note = "conflict observed" if conflict else "no conflicting outputs"
    return _verdict("slashable_safety", evidence, note)


class _Inclusion:
    """Tracks which transactions each client's output chain contains, slot by slot."""

    def __init__(self) -> None:
        self.txs_of: dict[str, list] = {GENESIS: []}
        self.replay = ChainReplay()
        self.contents: dict[str, dict] = defaultdict(lambda: defaultdict(int))

    def feed(self, ev: Event) -> None:
        if ev.kind in ("propose", "bundle"):
            self.txs_of[ev.detail["hash"]] = ev.detail["txs"]
        elif ev.kind == "output":
            chain = self.replay.chains[ev.party]
            counts = self.contents[ev.party]
            for h in chain[ev.detail["keep"]:]:
                for tx in self.txs_of.get(h, ()):
                    counts[tx] -= 1
            self.replay.apply(ev)
            for h in ev.detail["add"]:
                for tx in self.txs_of.get(h, ()):
                    counts[tx] += 1

    def has(self, client: str, tx: str) -> bool:
        return self.contents[client].get(tx, 0) > 0


def _deadline_check(trace: Trace, check: str, bound: int, clients: list) -> Verdict:
    hdr = trace.header
    horizon = hdr["horizon"]
    if not clients:
        return Verdict(check, NA, note="no eligible clients")
    deadlines = []
    inc = _Inclusion()
    evidence = []
    pending: list = []

    def settle(upto: int) -> None:
        while pending and pending[0][0] < upto:
            due, line, tx = pending.pop(0)
            for c in clients:
                if not inc.has(c, tx):
                    evidence.append((line, f"{tx} not in {c}'s output by slot {due}"))

    for line, ev in _numbered(trace):
        settle(ev.slot)
        inc.feed(ev)
        if ev.kind == "inject" and ev.slot + bound <= horizon:
            deadlines.append(ev.detail["tx"])
            pending.append((ev.slot + bound, line, ev.detail["tx"]))
            pending.sort()
    settle(horizon + 1)
    return _verdict(check, evidence, f"{len(deadlines)} transaction(s) within {bound} slots")


def _genesis_clients(hdr: dict, finality: str) -> list:
    return sorted(c for c, spec in hdr["clients"].items()
                  if spec["join"] == 0 and spec["finality"] == finality)


def check_liveness(trace: Trace) -> Verdict:
    hdr = trace.header
    if "liveness" not in hdr.get("checks", ()):
        return Verdict("liveness", NA, note="scenario does not claim normal-mode liveness")
    return _deadline_check(trace, "liveness", hdr["bounds"]["t_fin_budget"],
                           _genesis_clients(hdr, "fast"))


def check_rollup_liveness(trace: Trace) -> Verdict:
    hdr = trace.header
    if "rollup_liveness" not in hdr.get("checks", ()):
        return Verdict("rollup_liveness", NA, note="scenario does not claim rollup liveness")
    return _deadline_check(trace, "rollup_liveness", hdr["bounds"]["rollup"],
                           _genesis_clients(hdr, "fast"))


def check_slow_safety(trace: Trace) -> Verdict:
    hdr = trace.header
    slow = {c for c, spec in hdr["clients"].items() if spec["finality"] == "slow"}
    if not slow or hdr.get("baseline"):
        return Verdict("slow_safety", NA, note="no slow-finality clients")
    replay, spine, evidence = ChainReplay(), _Spine(), []
    for line, ev in _numbered(trace):
        if ev.kind == "output" and ev.party in slow:
            clash = spine.offer(replay.apply(ev), line)
            if clash is not None:
                evidence.append((line, f"{ev.party} output conflicts with line {clash}"))
    note = "slow outputs prefix-consistent"
    if "liveness" in hdr.get("checks", ()) and hdr.get("expect", {}).get("liveness") != FAIL:
        bound = hdr["bounds"]["slow"]
        live = _deadline_check(trace, "slow_safety", bound, _genesis_clients(hdr, "slow"))
        evidence.extend(live.evidence)
        note += f"; slow delivery bound {bound} = epoch duration {hdr['bounds']['epoch_duration']}" \
                f" + r_fin + 2 t_fin_budget"
    return _verdict("slow_safety", evidence, note)


def check_btc_contract(trace: Trace) -> Verdict:
    """Per-transaction confirmation within r_fin, and the confirmed-chain growth cap."""
    hdr = trace.header
    cfg, bounds = hdr["config"], hdr["bounds"]
    rfin, k, delta = bounds["r_fin"], cfg["k"], cfg["delta"]
    horizon = hdr["horizon"]
    submitted: dict[str, tuple] = {}
    included: dict[str, int] = {}
    views: dict[str, list] = defaultdict(list)  # client -> [(slot, length, line)]
    joined = {c: spec["join"] for c, spec in hdr["clients"].items()}
    for line, ev in _numbered(trace):
        if ev.kind == "btc_submit":
            submitted[ev.detail["txid"]] = (ev.slot, line)
        elif ev.kind == "btc_block":
            for txid in ev.detail["txs"]:
                included[txid] = ev.detail["height"]
        elif ev.kind == "btc_view" and ev.party in joined:
            views[ev.party].append((ev.slot, ev.detail["length"], line))

    def length_at(client: str, slot: int) -> tuple[int, int]:
        best, where = 1, 1
        for s, length, line in views[client]:
            if s > slot:
                break
            best, where = length, line
        return best, where

    def confirmed_by(client: str, height: int):
        for s, length, _ in views[client]:
            if length > height:
                return s
        return None

    evidence = []
    capped = set()
    for txid, (slot, line) in submitted.items():
        if slot + rfin > horizon:
            continue
        for client in joined:
            start = max(slot, joined[client])
            h = included.get(txid)
            when = confirmed_by(client, h) if h is not None else None
            if when is None or when > start + rfin:
                evidence.append((line, f"{txid} not confirmed for {client} within {rfin} slots"))
            # growth cap, stated per submission; one report per client keeps evidence short
            if client in capped or slot - 3 * delta < joined[client]:
                continue
            ell, _ = length_at(client, slot - 3 * delta)
            later, where = length_at(client, slot + rfin)
            if later > ell + k:
                capped.add(client)
                evidence.append((where, f"{client}: {txid} sent at slot {slot} (line {line}); |C| grew "
                                        f"from {ell} at slot {slot - 3 * delta} to {later} at slot "
                                        f"{slot + rfin} (> l + k)"))
    return _verdict("btc_contract", evidence, "per-tx r_fin confirmation and growth cap")


def check_synchrony(trace: Trace) -> Verdict:
    delta = trace.header["config"]["delta"]
    evidence = []
    for line, ev in _numbered(trace):
        if ev.kind == "send" and ev.detail["honest"]:
            late = {p: s for p, s in ev.detail["deliver"].items() if not ev.slot <= s <= ev.slot + delta}
            if late:
                evidence.append((line, f"honest message from {ev.party} delivered late to {sorted(late)}"))
    return _verdict("synchrony", evidence, f"honest messages delivered within {delta} slots")


CHECKS: dict[str, Callable[[Trace], Verdict]] = {
    "cp_safety": check_cp_safety,
    "slashable_safety": check_slashable_safety,
    "liveness": check_liveness,
    "rollup_liveness": check_rollup_liveness,
    "slow_safety": check_slow_safety,
    "btc_contract": check_btc_contract,
    "synchrony": check_synchrony,
}


def run_checks(trace: Trace, names: Iterable[str] | None = None) -> list[Verdict]:
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    return [CHECKS[n](trace) for n in names]


def meets_expectation(verdict: Verdict, expect: dict) -> bool:
    """A declared failure must actually fail, ``either`` accepts any verdict, anything else must not fail."""
    if expect.get(verdict.check) == "either":
        return True
    if expect.get(verdict.check) == FAIL:
        return verdict.result == FAIL
    return verdict.result != FAIL
