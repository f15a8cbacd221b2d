"""Participation-rate region: policy rates, covariance, oracle, membership."""

import itertools

import numpy as np
import pytest

from fedsel.availability import (
    ConfigurationDistribution,
    independent_distribution,
    two_client_example,
)
from fedsel.rate_region import (
    RateRegionModel,
    debiased_rows,
    linear_argmax_table,
    linear_max_oracle,
    membership,
    mix_tables,
    optimal_rate,
    random_policy_table,
    rate_of_policy,
    sampling_variance_exact,
    selection_covariance,
    variance_bounds,
)
from fedsel.selection import CorrelationMode, HObjective, PolicyTable

PRIORITY_TABLE = PolicyTable.deterministic(
    2, {((0, 1), 1): (0,), ((0,), 1): (0,), ((1,), 1): (1,), ((), 1): ()}
)
SPLIT_TABLE = PolicyTable(
    2,
    {
        ((0, 1), 1): (((0,), 0.5), ((1,), 0.5)),
        ((0,), 1): (((0,), 1.0),),
        ((1,), 1): (((1,), 1.0),),
        ((), 1): (((), 1.0),),
    },
)


def _two_client_model():
    return RateRegionModel.from_distribution(two_client_example())


def test_fixed_policies_induce_their_known_rates():
    model = _two_client_model()
    assert np.allclose(rate_of_policy(model, PRIORITY_TABLE), [0.375, 0.5], atol=1e-15)
    assert np.allclose(rate_of_policy(model, SPLIT_TABLE), [0.225, 0.65], atol=1e-15)


def test_selection_covariance_matches_hand_enumeration():
    model = _two_client_model()
    cov = selection_covariance(model, PRIORITY_TABLE)
    assert np.allclose(cov.rate, [0.375, 0.5], atol=1e-15)
    expected = np.array([[0.234375, -0.1875], [-0.1875, 0.25]])
    assert np.allclose(cov.sigma, expected, atol=1e-15)


def test_sampling_variance_identity_on_a_tiny_instance():
    model = _two_client_model()
    cov = selection_covariance(model, PRIORITY_TABLE)
    p = np.array([0.5, 0.5])
    v = np.array([[1.0, -2.0], [3.0, 0.5]])
    y = debiased_rows(v, p, cov.rate)
    vbar = p @ v
    # enumerate the four outcomes of the deterministic priority policy
    exact = 0.0
    for pattern, _, prob in two_client_example().outcomes:
        delta = y[pattern[0]] if pattern else np.zeros(2)
        exact += prob * float(np.sum((delta - vbar) ** 2))
    assert sampling_variance_exact(y, cov) == pytest.approx(exact, abs=1e-12)


def test_variance_bound_closed_forms_on_the_fixture():
    p = np.array([0.5, 0.5])
    r = np.array([0.375, 0.5])
    bounds = variance_bounds(p, r, local_steps=1, grad_bound=1.0)
    assert bounds.general == pytest.approx(16.0 / 3.0, abs=1e-12)
    assert bounds.uncorrelated == pytest.approx(20.0 / 3.0, abs=1e-12)
    scaled = variance_bounds(p, r, local_steps=3, grad_bound=2.0)
    assert scaled.general == pytest.approx(36.0 * 16.0 / 3.0, abs=1e-9)
    with pytest.raises(ValueError):
        variance_bounds(p, np.array([0.5, 0.0]), 1, 1.0)


def test_linear_oracle_beats_every_random_policy_in_its_direction():
    rng = np.random.default_rng(4)
    dist = independent_distribution(np.array([0.6, 0.3, 0.8, 0.45]), 2)
    model = RateRegionModel.from_distribution(dist)
    for _ in range(20):
        g = rng.standard_normal(4)
        best = linear_max_oracle(model, g)
        table_rate = rate_of_policy(model, linear_argmax_table(model, g))
        assert np.allclose(best, table_rate, atol=1e-12)
        for _ in range(10):
            r = rate_of_policy(model, random_policy_table(model, rng))
            assert g @ best >= g @ r - 1e-9


def test_max_rates_and_membership_of_fixture_points():
    model = _two_client_model()
    assert np.allclose(model.max_rates(), [0.375, 0.8], atol=1e-15)
    for point in ([0.375, 0.0], [0.375, 0.5], [0.225, 0.65], [0.0, 0.0], [0.0, 0.8]):
        assert membership(model, np.array(point), tol=1e-6).inside
    outside = membership(model, np.array([0.5, 0.5]), tol=1e-6)
    assert not outside.inside and outside.violation > 1e-6


def test_oracle_minimizes_h_on_the_fixture_for_both_modes():
    model = _two_client_model()
    res = optimal_rate(model, HObjective(np.array([0.5, 0.5])), tol=1e-8)
    assert res.converged
    assert np.allclose(res.rate, [0.375, 0.5], atol=1e-6)
    assert res.h_value == pytest.approx(7.0 / 6.0, abs=1e-6)
    corr = optimal_rate(
        model,
        HObjective(np.array([0.5, 0.5]), CorrelationMode.POSITIVELY_CORRELATED),
        tol=1e-8,
    )
    assert np.allclose(corr.rate, [0.375, 0.5], atol=1e-6)
    assert corr.h_value == pytest.approx(7.0 / 3.0, abs=1e-6)


def test_oracle_weighted_case_and_open_loop_agreement():
    rng = np.random.default_rng(12)
    dist = independent_distribution(np.array([0.5, 0.7, 0.4]), 1)
    model = RateRegionModel.from_distribution(dist)
    obj = HObjective(np.array([0.6, 0.3, 0.1]))
    line = optimal_rate(model, obj, tol=1e-9)
    loop = optimal_rate(model, obj, tol=1e-7, step_rule="open_loop", max_iter=200_000)
    assert np.allclose(line.rate, loop.rate, atol=1e-3)
    assert loop.h_value >= line.h_value - 1e-6
    # the optimum dominates random achievable rates
    for _ in range(200):
        r = rate_of_policy(model, random_policy_table(model, rng))
        if np.all(r[obj.p > 0] > 0):
            assert np.sum(obj.p**2 / r) >= line.h_value - 1e-9


def test_oracle_excludes_clients_that_can_never_be_selected():
    dist = ConfigurationDistribution(
        3, (((0, 1), 1, 0.6), ((0,), 1, 0.4))
    )
    model = RateRegionModel.from_distribution(dist)
    with pytest.warns(RuntimeWarning):
        res = optimal_rate(model, HObjective(np.array([0.4, 0.4, 0.2])), tol=1e-8)
    assert res.excluded == (2,)
    assert res.rate[2] == 0.0
    assert res.rate[0] <= 1.0 and res.converged


def test_mix_tables_mixes_rates_linearly():
    model = _two_client_model()
    mixed = mix_tables(PRIORITY_TABLE, SPLIT_TABLE, 0.25)
    want = 0.25 * np.array([0.375, 0.5]) + 0.75 * np.array([0.225, 0.65])
    assert np.allclose(rate_of_policy(model, mixed), want, atol=1e-12)
    with pytest.raises(ValueError):
        mix_tables(PRIORITY_TABLE, SPLIT_TABLE, 1.5)


def test_feasible_sets_enumerates_subsets_up_to_capacity():
    dist = independent_distribution(np.array([0.5, 0.5, 0.5]), 2)
    model = RateRegionModel.from_distribution(dist)
    idx = next(
        i for i, (pat, _, _) in enumerate(dist.outcomes) if pat == (0, 1, 2)
    )
    sets = set(model.feasible_sets(idx))
    expected = {s for m in (0, 1, 2) for s in itertools.combinations((0, 1, 2), m)}
    assert sets == expected
