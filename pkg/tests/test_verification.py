"""The verification runner itself: registry, filtering, crash handling."""

from fedsel.harness.verification import CheckResult, check_names, run_checks


def test_registry_lists_all_ten_checks_in_order():
    assert check_names() == (
        "rate_tracking",
        "unbiased_aggregation",
        "variance_identity",
        "variance_bounds",
        "greedy_optimality",
        "rate_region_oracle",
        "convergence_rate",
        "availability_gap",
        "update_norm_bound",
        "determinism",
    )


def test_only_filter_selects_a_single_check():
    results = run_checks(fast=True, only=["greedy_optimality"])
    assert len(results) == 1
    assert results[0].name == "greedy_optimality"
    assert results[0].passed
    assert results[0].seconds >= 0.0
    assert isinstance(results[0], CheckResult)


def test_unknown_name_runs_nothing():
    assert run_checks(only=["no_such_check"]) == []
