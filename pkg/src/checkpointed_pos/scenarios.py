"""Named scenarios: honest operation, attacks and impossibility demonstrations.

Each builder returns a :class:`~checkpointed_pos.sim.Scenario`; the ``expect``
map records the verdict every applicable check should reach, which the CLI
compares against.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable

from .network import ConfigurationError
from .pos import Tx, quorum
from .sim import ClientSpec, Scenario, SimConfig, party_rng

SAFETY = ("cp_safety", "slashable_safety", "slow_safety")
ALL_CHECKS = ("cp_safety", "slashable_safety", "liveness", "rollup_liveness", "slow_safety",
              "btc_contract", "synchrony")
DEFAULT_CHECKS = ALL_CHECKS[:5]


def payments(start: int, stop: int, every: int, prefix: str = "t") -> list:
    return [(slot, Tx(f"{prefix}{i}")) for i, slot in enumerate(range(start, stop, every))]


def standard_clients(delta: int) -> list:
    return [ClientSpec("c0", "fast", 0), ClientSpec("c1", "fast", delta), ClientSpec("c2", "slow", None)]


def _expect(checks, **overrides) -> dict:
    out = {c: "pass" for c in checks}
    out.update(overrides)
    return out


def honest(seed: int = 0, n: int = 4, horizon: int = 300, **cfg) -> Scenario:
    """No faults; a queue validator replaces one that withdraws."""
    config = SimConfig(n=n, seed=seed, **cfg)
    leaver = n - 1
    txs = payments(1, horizon - 40, 5)
    if horizon >= 20:
        txs.append((20, Tx(f"req{leaver}", "withdraw_request", leaver)))
    checks = ("cp_safety", "slashable_safety", "liveness", "slow_safety", "synchrony")
    return Scenario("honest", config, horizon, standard_clients(config.delta), txs, queue=(n,),
                    expect=_expect(checks), checks=checks)


def lazy_minority(seed: int = 0, n: int = 7, horizon: int = 200, **cfg) -> Scenario:
    """Fewer than a third of the validators propose empty blocks and never vote."""
    f = (n - 1) // 3
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(range(n - f, n)), **cfg)
    checks = ("cp_safety", "slashable_safety", "liveness", "slow_safety", "synchrony")
    return Scenario("lazy_minority", config, horizon, standard_clients(config.delta),
                    payments(1, horizon - 40, 4), strategy="lazy", expect=_expect(checks),
                    checks=checks)


def censorship(seed: int = 0, n: int = 6, f: int | None = None, horizon: int = 260,
               **cfg) -> Scenario:
    """``f`` validators halt finalization after an epoch-final height and censor a target.

    With ``f >= n/3`` the target reaches clients through rollup mode. With
    ``f = 0`` and a tiny ``t_tm`` the liveness transaction is answered by a
    checkpoint before the rollup depth.
    """
    f = math.ceil(n / 3) if f is None else f
    if 2 * f >= n:
        raise ConfigurationError("censorship needs f < n/2 so honest validators can sign bundles")
    cfg.setdefault("epoch_len", 4)
    if f == 0:
        # One probe transaction lands in an epoch-final block; its liveness
        # transaction is posted at once but included as late as allowed, so the
        # epoch checkpoint overtakes it and no rollup starts.
        cfg.setdefault("t_tm", 1)
        config = SimConfig(n=n, seed=seed, **cfg)
        params = {"slow_liveness": True, "probe_tx": "probe", "probe_height": 2 * config.epoch_len - 1}
        checks = ("cp_safety", "slashable_safety", "liveness", "slow_safety", "synchrony")
        return Scenario("censorship", config, horizon, standard_clients(config.delta), [],
                        strategy="follow", params=params, expect=_expect(checks), checks=checks)
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(range(n - f, n)), **cfg)
    halt = 2 * config.epoch_len
    txs = payments(1, horizon - config.rollup_bound, 7)
    params = {"halt_height": halt, "target": "censored", "targets": ["censored"]}
    checks = ("cp_safety", "slashable_safety", "rollup_liveness", "slow_safety", "synchrony")
    return Scenario("censorship", config, horizon, standard_clients(config.delta), txs,
                    strategy="censor", params=params, expect=_expect(checks), checks=checks)


def data_unavailability(seed: int = 0, n: int = 4, f: int | None = None, reveal_at: int | None = 140,
                        horizon: int = 200, **cfg) -> Scenario:
    """A supermajority checkpoints a withheld epoch, then (optionally) reveals it."""
    f = n - 1 if f is None else f
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(range(n - f, n)), **cfg)
    txs = payments(1, horizon - 20, 5)
    txs.append((3, Tx(f"req{n - 1}", "withdraw_request", n - 1)))
    checks = ("cp_safety", "slashable_safety", "slow_safety", "synchrony")
    return Scenario("data_unavailability", config, horizon, standard_clients(config.delta), txs,
                    strategy="private_chain", params={"fork_epoch": 1, "reveal_at": reveal_at},
                    expect=_expect(checks), checks=checks)


def safety_violation_recovery(seed: int = 0, n: int = 7, horizon: int = 320, **cfg) -> Scenario:
    """Just under half the validators double-sign; slashing and recovery go through rollup."""
    # conflicting certificates need at least 2q - n double-signers
    f = max(math.ceil(n / 3), 2 * quorum(n) - n)
    if not f < n / 2:
        raise ConfigurationError(f"n={n}: a double-signing minority below n/2 cannot finalize conflicting blocks")
    cfg.setdefault("epoch_len", 4)
    bad = tuple(range(n - f, n))
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(bad), **cfg)
    # first height after epoch 1 whose proposer is corrupted
    height = next(h for h in range(config.epoch_len + 1, config.epoch_len + n + 1)
                  if (h - 1) % n in bad)
    clients = [ClientSpec(f"c{i}", "fast", 0) for i in range(4)] + [ClientSpec("c4", "slow", None)]
    txs = payments(1, horizon - config.rollup_bound, 6)
    checks = ("cp_safety", "slashable_safety", "rollup_liveness", "slow_safety", "synchrony")
    return Scenario("safety_violation_recovery", config, horizon, clients, txs,
                    queue=tuple(range(n, n + f)), strategy="double_sign",
                    params={"attack_height": height}, validator_lag="zero",
                    expect=_expect(checks), checks=checks)


def posterior_corruption(seed: int = 0, n: int = 4, baseline: bool = True, horizon: int = 260,
                         join: int = 230, post_checkpoints: bool | None = None, keys_erased: bool = False,
                         **cfg) -> Scenario:
    """The whole initial set withdraws, then rewrites history for a late client."""
    config = SimConfig(n=n, seed=seed, **cfg)
    if post_checkpoints is None:
        post_checkpoints = not baseline
    standby = tuple(range(n, 2 * n))
    attack = tuple(range(2 * n, 3 * n))
    txs = [(1, Tx(f"bond{v}", "bond", v)) for v in standby]
    txs += [(1, Tx(f"req{v}", "withdraw_request", v)) for v in range(n)]
    txs += payments(3, join - 20, 6)
    clients = [ClientSpec("c0", "fast", 0), ClientSpec("c1", "slow", config.delta),
               ClientSpec("late", "fast", 0, join=join)]
    if baseline and not keys_erased:
        checks = ("slashable_safety", "synchrony")
        expect = {"slashable_safety": "fail", "synchrony": "pass"}
    elif baseline:
        checks = ("slashable_safety", "synchrony")
        expect = _expect(checks)
    else:
        checks = ("cp_safety", "slashable_safety", "slow_safety", "synchrony")
        expect = _expect(checks)
    return Scenario("posterior_corruption", config, horizon, clients, txs, standby=standby,
                    extra_adversary_ids=attack, strategy="posterior",
                    params={"attack_ids": list(attack), "post_checkpoints": post_checkpoints},
                    baseline=baseline, keys_erased=keys_erased, expect=expect, checks=checks)


def half_split(seed: int = 0, n: int = 4, f: int | None = None, horizon: int = 240,
               **cfg) -> Scenario:
    """A silent fraction of the validators; at ``f >= n/2`` no rule can keep liveness.

    Below half, the silent proposers' heights are bridged by rollup mode.
    """
    f = math.ceil(n / 2) if f is None else f
    if not 0 <= f < n:
        raise ConfigurationError("half_split needs 0 <= f < n")
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(range(n - f, n)), **cfg)
    txs = payments(1, horizon // 2, 6)
    if 2 * f >= n:
        checks = ("cp_safety", "slashable_safety", "liveness", "slow_safety")
        expect = _expect(checks, liveness="fail")
    else:
        # a silent proposer halts its height (no view change), so progress
        # comes from rollup mode even when f < n/3
        checks = ("cp_safety", "slashable_safety", "rollup_liveness", "slow_safety")
        expect = _expect(checks)
    return Scenario("half_split", config, horizon, standard_clients(config.delta), txs,
                    strategy="silent", expect=expect, checks=checks)


def inactivity_leak(seed: int = 0, n: int = 4, f: int | None = None, leak_after: int = 12,
                    join: int = 80, horizon: int = 120, **cfg) -> Scenario:
    """Without checkpoints, a silent majority and the honest rest each leak the other out.

    A client joining late sees two equally long final chains and adopts one
    by seed, so the expected slashable-safety verdict is either.
    """
    f = math.ceil(n / 2) if f is None else f
    if not 0 < f < n:
        raise ConfigurationError("inactivity_leak needs 0 < f < n")
    config = SimConfig(n=n, seed=seed, adversary_ids=frozenset(range(n - f, n)), **cfg)
    clients = [ClientSpec("c0", "fast", 0), ClientSpec("late", "fast", 0, join=join)]
    checks = ("slashable_safety", "synchrony")
    return Scenario("inactivity_leak", config, horizon, clients, payments(1, join - 10, 6),
                    strategy="leak_split", baseline=True, leak_after=leak_after,
                    expect=_expect(checks, slashable_safety="either"), checks=checks)


def fuzz(seed: int = 0, horizon: int = 80, **overrides) -> Scenario:
    """Randomized parameters, adversary, delays and inclusion order, seeded by ``seed``."""
    rng = party_rng(seed, "fuzz")
    n = overrides.pop("n", rng.randint(3, 9))
    k = overrides.pop("k", rng.randint(1, 4))
    f = rng.randint(0, n - 1)
    bad = frozenset(rng.sample(range(n), f))
    strategy = rng.choice(["follow", "lazy", "silent", "censor", "double_sign", "private_chain"])
    params: dict = {}
    epoch_len = rng.randint(2, 4)
    if strategy == "censor":
        params = {"halt_height": rng.randint(1, 3) * epoch_len}
    elif strategy == "double_sign":
        params = {"attack_height": rng.randint(2, 8), "cross_delay": rng.randint(1, 10)}
    elif strategy == "private_chain":
        params = {"fork_epoch": rng.randint(1, 2), "reveal_at": rng.choice([None, rng.randint(20, 70)])}
    config = SimConfig(n=n, k=k, delta=rng.randint(1, 3), btc_interval=rng.randint(1, 3),
                       epoch_len=epoch_len, seed=seed, adversary_ids=bad, **overrides)
    network = rng.choice(["uniform", "max_delay", "prompt"])
    inclusion = rng.choice(["prompt", "max_delay", "random", "reverse"])
    clients = [ClientSpec(f"c{i}", rng.choice(["fast", "slow"]), None) for i in range(3)]
    txs = payments(1, horizon, rng.randint(3, 8))
    checks = ("cp_safety", "slashable_safety", "slow_safety", "synchrony")
    return Scenario("fuzz", config, horizon, clients, txs, strategy=strategy, params=params,
                    network=network, inclusion=inclusion, expect=_expect(checks), checks=checks)


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "honest": honest,
    "lazy_minority": lazy_minority,
    "censorship": censorship,
    "data_unavailability": data_unavailability,
    "safety_violation_recovery": safety_violation_recovery,
    "posterior_corruption": posterior_corruption,
    "half_split": half_split,
    "inactivity_leak": inactivity_leak,
    "fuzz": fuzz,
}


def build(name: str, seed: int = 0, **params) -> Scenario:
    """Build scenario ``name``; ``params`` go to the builder (``config`` entries to SimConfig)."""
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    params = dict(params)
    cfg = params.pop("config", {}) or {}
    try:
        return builder(seed=seed, **params, **cfg)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def with_finality(scenario: Scenario, finality: str) -> Scenario:
    """Force every client onto one finality rule (``fast``/``slow``) or keep the mix (``both``)."""
    if finality == "both":
        return scenario
    return replace(scenario, clients=[replace(c, finality=finality) for c in scenario.clients])


__all__ = ["ALL_CHECKS", "DEFAULT_CHECKS", "SCENARIOS", "build", "payments", "with_finality"]
