"""Run the fault-free scenario and print each client's outputs and the verdicts."""

from checkpointed_pos import build, run_checks, run_scenario

result = run_scenario(build("honest", seed=1))
for name, client in result.world.clients.items():
    print(f"{name}: output {len(client.L)} blocks, checkpointed {len(client.cp)}, mode {client.mode}")
for v in run_checks(result.trace, result.scenario.checks):
    print(f"{v.check:17} {v.result:15} {v.note}")
