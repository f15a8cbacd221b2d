"""Selection policies and the tracked-rate machinery."""

import numpy as np
import pytest

from fedsel.availability import ConfigurationSample
from fedsel.selection import (
    CorrelationMode,
    HObjective,
    ParticipationRate,
    PolicyIncompleteError,
    PolicyTable,
    f3ast_select,
    fedavg_select,
    fixed_policy_select,
    h_gradient,
    h_value,
    poc_select,
    smooth_update,
)


def test_h_value_and_gradient_closed_forms():
    obj = HObjective(np.array([0.5, 0.5]))
    r = np.array([0.375, 0.5])
    assert h_value(obj, r) == pytest.approx(7.0 / 6.0, abs=1e-15)
    assert np.allclose(h_gradient(obj, r), [-16.0 / 9.0, -1.0], atol=1e-15)
    corr = HObjective(np.array([0.5, 0.5]), CorrelationMode.POSITIVELY_CORRELATED)
    assert h_value(corr, r) == pytest.approx(0.5 / 0.375 + 1.0, abs=1e-15)
    assert np.allclose(h_gradient(corr, r), [-0.5 / 0.375**2, -2.0])


def test_h_rejects_nonpositive_rates():
    obj = HObjective(np.array([0.6, 0.4]))
    with pytest.raises(ValueError):
        h_value(obj, np.array([0.5, 0.0]))


def test_greedy_takes_the_largest_utilities_up_to_capacity():
    # utilities p^2/r^2: (6.25, 0.36, 0.16)
    obj = HObjective(np.array([0.5, 0.3, 0.2]))
    rate = ParticipationRate(np.array([0.2, 0.5, 0.5]))
    result = f3ast_select(obj, rate, ConfigurationSample(0, (0, 1, 2), 2))
    assert result.selected == (0, 1)
    assert np.allclose(result.utilities, [6.25, 0.36, 0.16])
    # capacity exceeding availability selects everyone available
    assert f3ast_select(obj, rate, ConfigurationSample(0, (1, 2), 5)).selected == (1, 2)
    assert f3ast_select(obj, rate, ConfigurationSample(0, (), 3)).selected == ()
    assert f3ast_select(obj, rate, ConfigurationSample(0, (0, 1), 0)).selected == ()


def test_greedy_breaks_ties_toward_lower_ids():
    obj = HObjective(np.array([0.25, 0.25, 0.25, 0.25]))
    rate = ParticipationRate(np.full(4, 0.25))
    result = f3ast_select(obj, rate, ConfigurationSample(0, (1, 2, 3), 2))
    assert result.selected == (1, 2)


def test_smooth_update_decays_and_floors():
    rate = ParticipationRate(np.array([0.4, 0.6]), beta=0.1, r_min=0.001)
    new = smooth_update(rate, (1,))
    assert np.allclose(new.r, [0.36, 0.64], atol=1e-15)
    floored = ParticipationRate(np.array([0.0011, 0.5]), beta=0.1, r_min=0.001)
    assert smooth_update(floored, ()).r[0] == pytest.approx(0.001)


def test_participation_rate_validation():
    with pytest.raises(ValueError):
        ParticipationRate(np.array([0.5]), beta=0.0)
    with pytest.raises(ValueError):
        ParticipationRate(np.array([1.5]))
    with pytest.raises(ValueError):
        ParticipationRate(np.array([1e-6]), r_min=1e-4)
    uniform = ParticipationRate.uniform(4)
    assert np.allclose(uniform.r, 0.25)


def test_fedavg_draws_distinct_clients_and_skips_zero_weights():
    p = np.array([0.5, 0.5, 0.0, 0.0])
    rng = np.random.default_rng(0)
    for _ in range(25):
        got = fedavg_select(p, ConfigurationSample(0, (0, 1, 2, 3), 3), rng).selected
        assert len(set(got)) == len(got) <= 3
        assert set(got) <= {0, 1}
    assert fedavg_select(p, ConfigurationSample(0, (), 3), rng).selected == ()


def test_poc_trains_the_lossiest_of_the_polled_candidates():
    p = np.full(4, 0.25)
    losses = {0: 1.0, 1: 9.0, 2: 5.0, 3: 9.0}.__getitem__
    rng = np.random.default_rng(3)
    got = poc_select(p, ConfigurationSample(0, (0, 1, 2, 3), 4), losses, d=4, m=2, rng=rng)
    # ties in loss resolve toward the lower id
    assert got.selected == (1, 3)
    with pytest.raises(ValueError):
        poc_select(p, ConfigurationSample(0, (0,), 1), losses, d=0, m=1, rng=rng)


def test_policy_table_validation_and_deterministic_builder():
    table = PolicyTable.deterministic(2, {((0, 1), 1): (0,), ((0,), 1): (0,)})
    assert table.entries[((0, 1), 1)] == (((0,), 1.0),)
    with pytest.raises(ValueError):
        PolicyTable(2, {((0, 1), 1): (((0, 1), 1.0),)})  # subset exceeds capacity
    with pytest.raises(ValueError):
        PolicyTable(2, {((0,), 1): (((1,), 1.0),)})  # selects an unavailable client
    with pytest.raises(ValueError):
        PolicyTable(2, {((0,), 1): (((0,), 0.6),)})  # probabilities must sum to one


def test_fixed_policy_select_follows_the_table():
    table = PolicyTable.deterministic(
        2, {((0, 1), 1): (0,), ((0,), 1): (0,), ((1,), 1): (1,), ((), 1): ()}
    )
    rng = np.random.default_rng(0)
    assert fixed_policy_select(table, ConfigurationSample(0, (0, 1), 1), rng).selected == (0,)
    assert fixed_policy_select(table, ConfigurationSample(0, (1,), 1), rng).selected == (1,)
    with pytest.raises(PolicyIncompleteError):
        fixed_policy_select(table, ConfigurationSample(0, (0, 1), 2), rng)


def test_randomized_table_rows_are_sampled_with_their_frequencies():
    table = PolicyTable(
        2, {((0, 1), 1): (((0,), 0.25), ((1,), 0.75))}
    )
    rng = np.random.default_rng(42)
    draws = [
        fixed_policy_select(table, ConfigurationSample(t, (0, 1), 1), rng).selected
        for t in range(4000)
    ]
    share = np.mean([d == (1,) for d in draws])
    assert share == pytest.approx(0.75, abs=0.03)
