"""End-to-end acceptance runs of the ten verification checks.

Each test executes one frozen check at its full budget and stated
tolerance (see fedsel.harness.verification); the session summary prints
one PASS/FAIL line per criterion.  These are the same checks exposed by
``fedsel verify``.
"""

from fedsel.harness.verification import run_checks


def _run(name, acceptance_log):
    results = run_checks(only=[name])
    assert len(results) == 1, f"check {name!r} is not registered"
    res = results[0]
    acceptance_log.append(res)
    assert res.passed, f"{res.name}: {res.details}"


def test_tracked_rates_reach_the_region_optimum(acceptance_log):
    _run("rate_tracking", acceptance_log)


def test_debiased_aggregation_is_unbiased(acceptance_log):
    _run("unbiased_aggregation", acceptance_log)


def test_sampling_variance_matches_the_identity(acceptance_log):
    _run("variance_identity", acceptance_log)


def test_variance_ceilings_hold_on_random_instances(acceptance_log):
    _run("variance_bounds", acceptance_log)


def test_greedy_selection_equals_exhaustive_argmax(acceptance_log):
    _run("greedy_optimality", acceptance_log)


def test_rate_region_oracle_finds_the_minimizer(acceptance_log):
    _run("rate_region_oracle", acceptance_log)


def test_decaying_schedule_contracts_like_one_over_t(acceptance_log):
    _run("convergence_rate", acceptance_log)


def test_rate_tracking_beats_uniform_sampling(acceptance_log):
    _run("availability_gap", acceptance_log)


def test_local_updates_respect_the_norm_ceiling(acceptance_log):
    _run("update_norm_bound", acceptance_log)


def test_identical_runs_reproduce_identical_files(acceptance_log):
    _run("determinism", acceptance_log)
