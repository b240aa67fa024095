import pytest

from checkpointed_pos import SCENARIOS, ConfigurationError, SimConfig, build, run_scenario, with_finality
from checkpointed_pos.checks import meets_expectation
from conftest import cached_run, verdicts

CASES = [
    ("honest", {}), ("lazy_minority", {}), ("censorship", {}), ("censorship", {"n": 5, "f": 0}),
    ("data_unavailability", {}), ("data_unavailability", {"reveal_at": None}),
    ("safety_violation_recovery", {}), ("posterior_corruption", {}),
    ("posterior_corruption", {"baseline": False}), ("posterior_corruption", {"keys_erased": True}),
    ("half_split", {}), ("half_split", {"n": 7, "f": 2}), ("inactivity_leak", {}), ("fuzz", {}),
]


@pytest.mark.parametrize("name,params", CASES, ids=[f"{n}-{p}" for n, p in CASES])
@pytest.mark.parametrize("seed", [1, 2])
def test_scenario_meets_its_declared_expectations(name, params, seed):
    result = cached_run(name, seed, **params)
    for v in verdicts(result).values():
        assert meets_expectation(v, result.scenario.expect), v


def test_every_scenario_is_registered_and_buildable():
    for name in SCENARIOS:
        assert build(name, 0).name == name


def test_unknown_scenario():
    with pytest.raises(ConfigurationError):
        build("nope")


def test_unknown_parameter_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        build("honest", 0, colour="red")


@pytest.mark.parametrize("name,params", [("censorship", {"n": 4}), ("half_split", {"f": 4}),
                                         ("safety_violation_recovery", {"n": 2}),
                                         ("inactivity_leak", {"f": 0})])
def test_out_of_range_parameters(name, params):
    with pytest.raises(ConfigurationError):
        build(name, 0, **params)


def test_bad_protocol_settings():
    with pytest.raises(ConfigurationError):
        SimConfig(delta=0)
    with pytest.raises(ConfigurationError):
        SimConfig.from_dict({"n": 4, "speed": 3})


def test_horizon_zero_leaves_everyone_at_genesis():
    result = run_scenario(build("honest", 0, horizon=0))
    assert result.trace.events[0].kind == "config"
    assert not result.trace.of_kind("output", "cp", "btc_block")
    assert all(e.detail["l_len"] == e.detail["cp_len"] == 1 for e in result.trace.of_kind("final"))


def test_same_seed_same_trace_bytes():
    a = run_scenario(build("censorship", 3)).trace.to_ndjson()
    b = run_scenario(build("censorship", 3)).trace.to_ndjson()
    assert a == b


def test_finality_override():
    s = with_finality(build("honest", 0), "slow")
    assert {c.finality for c in s.clients} == {"slow"}
    assert with_finality(build("honest", 0), "both").clients == build("honest", 0).clients


def test_half_split_majority_blames_nobody():
    result = cached_run("half_split", 1)
    honest = set(result.trace.header["honest_validators"])
    assert all(not (c.slashable & honest) for c in result.world.clients.values())
    assert verdicts(result)["liveness"].result == "fail"


def test_half_split_below_half_recovers_through_rollup():
    result = cached_run("half_split", 1, n=7, f=2)
    assert verdicts(result)["rollup_liveness"].result == "pass"
    assert result.world.clients["c0"].rollups > 0


def test_baseline_posterior_corruption_is_unaccountable():
    result = cached_run("posterior_corruption", 1)
    v = verdicts(result)["slashable_safety"]
    assert v.result == "fail"
    assert not result.world.clients["late"].slashable
    assert result.trace.of_kind("attack")


def test_erased_keys_stop_the_posterior_attack():
    result = cached_run("posterior_corruption", 1, keys_erased=True)
    assert result.trace.of_kind("attack_failed")
    assert verdicts(result)["slashable_safety"].result == "pass"


def test_checkpointing_defeats_the_posterior_attack():
    result = cached_run("posterior_corruption", 1, baseline=False)
    assert verdicts(result)["cp_safety"].result == "pass"
    assert verdicts(result)["slashable_safety"].result == "pass"


def test_inactivity_leak_outcome_depends_on_seed():
    outcomes = set()
    for seed in range(6):
        result = cached_run("inactivity_leak", seed)
        assert result.trace.of_kind("safety_hazard")
        outcomes.add(verdicts(result)["slashable_safety"].result)
    assert outcomes == {"pass", "fail"}
