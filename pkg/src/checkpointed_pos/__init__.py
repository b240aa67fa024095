"""Simulator for a proof-of-stake chain checkpointed onto a Bitcoin-like ledger.

Typical use::

    from checkpointed_pos import build, run_scenario, run_checks
    result = run_scenario(build("honest", seed=1))
    verdicts = run_checks(result.trace, result.scenario.checks)
"""

from .checkpoint import (BundleCheckpoint, Checkpoint, bundle_checkpoint_valid, checkpoint_valid,
                         decode_op_return, encode_op_return)
from .checks import CHECKS, Verdict, meets_expectation, run_checks
from .network import ConfigurationError
from .scenarios import SCENARIOS, build, with_finality
from .sim import ClientSpec, RunResult, Scenario, SimConfig, World, run_scenario
from .trace import Event, Trace

__all__ = [
    "BundleCheckpoint", "CHECKS", "Checkpoint", "ClientSpec", "ConfigurationError", "Event",
    "RunResult", "SCENARIOS", "Scenario", "SimConfig", "Trace", "Verdict", "World", "build",
    "bundle_checkpoint_valid", "checkpoint_valid", "decode_op_return", "encode_op_return",
    "meets_expectation", "run_checks", "run_scenario", "with_finality",
]
