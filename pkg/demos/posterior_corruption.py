"""Old validators withdraw, then sign an alternative history for a client that joins late.

Without checkpoints the late client adopts the attack chain and can blame
nobody; with checkpoints it stays on the canonical chain.
"""

from checkpointed_pos import build, run_checks, run_scenario

for baseline in (True, False):
    result = run_scenario(build("posterior_corruption", seed=1, baseline=baseline))
    late, canon = result.world.clients["late"], result.world.clients["c0"]
    agree = late.L[:len(canon.L)] == canon.L[:len(late.L)]
    verdict = {v.check: v.result for v in run_checks(result.trace, ["slashable_safety"])}
    label = "checkpointing off" if baseline else "checkpointing on "
    print(f"{label}: late client consistent with c0: {agree}; slashable {sorted(late.slashable)}; "
          f"slashable_safety {verdict['slashable_safety']}")
