"""A third of the validators censor one transaction; clients fall back to rollup mode.

Prints the mode changes each client goes through and when the censored
transaction first reaches its output.
"""

from checkpointed_pos import build, run_scenario

result = run_scenario(build("censorship", seed=1, n=7, f=3))
bound = result.scenario.cfg.rollup_bound
injected = next(e.slot for e in result.trace if e.kind == "inject" and e.detail["tx"] == "censored")
bundles = {e.detail["hash"] for e in result.trace if e.kind == "bundle" and "censored" in e.detail["txs"]}
print(f"censored tx injected at slot {injected}; deadline slot {injected + bound}")
for ev in result.trace:
    if ev.kind == "mode_change" and ev.party == "c0":
        print(f"  slot {ev.slot}: c0 -> {ev.detail['mode']}")
    elif ev.kind == "output" and bundles & set(ev.detail["add"]):
        print(f"  slot {ev.slot}: {ev.party} outputs the bundle carrying it")
