from functools import lru_cache

from checkpointed_pos import build, run_checks, run_scenario


@lru_cache(maxsize=None)
def _run(name: str, seed: int, frozen: tuple):
    return run_scenario(build(name, seed, **dict(frozen)))


def cached_run(name: str, seed: int = 1, **params):
    """Scenario runs are deterministic, so tests share them."""
    return _run(name, seed, tuple(sorted(params.items())))


def verdicts(result, names=None):
    names = result.scenario.checks if names is None else names
    return {v.check: v for v in run_checks(result.trace, names)}
