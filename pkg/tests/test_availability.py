"""Availability processes: derived probabilities, sampling, enumeration."""

import numpy as np
import pytest

from fedsel.availability import (
    AvailabilityModel,
    CapacitySchedule,
    ConfigurationDistribution,
    ConfigurationSample,
    derive_client_probs,
    independent_distribution,
    periodic_mixture_distribution,
    sample_round,
    two_client_example,
)


def test_two_client_fixture_matches_independent_enumeration():
    fixture = {(pat, cap): prob for pat, cap, prob in two_client_example().outcomes}
    derived = independent_distribution(np.array([0.375, 0.8]), 1)
    for pat, cap, prob in derived.outcomes:
        assert fixture[(pat, cap)] == pytest.approx(prob, abs=1e-15)
    assert sum(fixture.values()) == pytest.approx(1.0)


def test_distribution_validation_rejects_bad_mass_and_duplicates():
    with pytest.raises(ValueError):
        ConfigurationDistribution(2, (((0,), 1, 0.7),))
    with pytest.raises(ValueError):
        ConfigurationDistribution(2, (((0,), 1, 0.5), ((0,), 1, 0.5)))


def test_configuration_sample_requires_sorted_unique_ids():
    with pytest.raises(ValueError):
        ConfigurationSample(0, (2, 1), 1)
    with pytest.raises(ValueError):
        ConfigurationSample(0, (1, 1), 1)
    with pytest.raises(ValueError):
        ConfigurationSample(0, (0,), -1)


def test_capacity_schedules():
    const = CapacitySchedule.constant(5)
    assert const.value_at(0) == const.value_at(10 ** 6) == 5
    listed = CapacitySchedule.listed([3, 1, 4])
    assert [listed.value_at(t) for t in range(3)] == [3, 1, 4]
    with pytest.raises(IndexError):
        listed.value_at(3)
    with pytest.raises(ValueError):
        CapacitySchedule.constant(-1)


def test_always_and_scarce_probabilities_are_exact():
    assert np.array_equal(derive_client_probs(AvailabilityModel.always(4)), np.ones(4))
    assert np.array_equal(
        derive_client_probs(AvailabilityModel.scarce(4, q=0.2)), np.full(4, 0.2)
    )


def test_lognormal_models_normalize_the_largest_draw_to_one():
    for model in (AvailabilityModel.home_devices(50), AvailabilityModel.smartphones(50)):
        q = derive_client_probs(model, rng=123)
        assert q.shape == (50,)
        assert np.max(q) == 1.0
        assert np.sum(q >= 1.0) == 1
        assert np.all((q > 0.0) & (q <= 1.0))


def test_uneven_probabilities_hit_the_mean_and_oppose_the_weights():
    p = np.array([0.5, 0.25, 0.15, 0.07, 0.03])
    model = AvailabilityModel.uneven(5, mean_q=0.4)
    q = derive_client_probs(model, weights=p)
    assert np.mean(q) == pytest.approx(0.4, abs=1e-9)
    # heavier clients are available less often
    assert np.all(np.diff(q) >= -1e-12)
    with pytest.raises(ValueError):
        derive_client_probs(AvailabilityModel.uneven(5), weights=None)


def test_smartphones_diurnal_factor_cycles():
    model = AvailabilityModel.smartphones(3, amplitude=0.4, offset=0.5, period_steps=24)
    factors = np.array([model.diurnal_factor(t) for t in range(48)])
    assert np.allclose(factors[:24], factors[24:])
    assert factors.min() >= 0.1 - 1e-12 and factors.max() <= 0.9 + 1e-12
    assert AvailabilityModel.scarce(3).diurnal_factor(7) == 1.0


def test_effective_q_requires_derivation_first():
    model = AvailabilityModel.smartphones(3)
    with pytest.raises(RuntimeError):
        model.effective_q(0)


def test_sample_round_is_a_pure_function_of_its_inputs():
    model = AvailabilityModel.scarce(20, q=0.5)
    derive_client_probs(model)
    rng = np.random.default_rng(0)
    one = sample_round(model, 4, 3, np.random.default_rng(9))
    two = sample_round(model, 4, 3, np.random.default_rng(9))
    assert one == two
    assert one.capacity == 4 and one.round == 3
    assert all(0 <= k < 20 for k in one.available)
    listed = CapacitySchedule.listed([2, 7])
    assert sample_round(model, listed, 1, rng).capacity == 7


def test_enumeration_guards_against_exponential_blowup():
    with pytest.raises(ValueError):
        independent_distribution(np.full(17, 0.5), 2)
    model = AvailabilityModel.smartphones(13)
    derive_client_probs(model, rng=1)
    with pytest.raises(ValueError):
        periodic_mixture_distribution(model, 2)


def test_periodic_mixture_averages_the_diurnal_cycle():
    model = AvailabilityModel.smartphones(4, period_steps=6)
    derive_client_probs(model, rng=5)
    dist = periodic_mixture_distribution(model, 2)
    total = sum(prob for _, _, prob in dist.outcomes)
    assert total == pytest.approx(1.0, abs=1e-12)
    # marginal availability of client k equals the cycle average of q_k(t)
    marginals = np.zeros(4)
    for pat, _, prob in dist.outcomes:
        for k in pat:
            marginals[k] += prob
    expected = np.mean([model.effective_q(t) for t in range(6)], axis=0)
    assert np.allclose(marginals, expected, atol=1e-12)
