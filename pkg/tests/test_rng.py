"""Seed-derivation contract: named sub-streams are stable and independent."""

import numpy as np
import pytest

from fedsel.rng import AVAILABILITY, BATCH, availability_rng, batch_rng, policy_rng, substream


def test_same_key_reproduces_the_stream():
    a = substream(42, AVAILABILITY, 7).random(5)
    b = substream(42, AVAILABILITY, 7).random(5)
    assert np.array_equal(a, b)


def test_different_concerns_and_keys_give_different_streams():
    base = substream(42, AVAILABILITY, 7).random(5)
    assert not np.array_equal(base, substream(42, BATCH, 7).random(5))
    assert not np.array_equal(base, substream(42, AVAILABILITY, 8).random(5))
    assert not np.array_equal(base, substream(43, AVAILABILITY, 7).random(5))


def test_negative_master_seed_is_rejected():
    with pytest.raises(ValueError):
        substream(-1, AVAILABILITY)


def test_batch_stream_is_keyed_by_round_and_client():
    one = batch_rng(3, round_t=10, client=4).integers(0, 100, 8)
    two = batch_rng(3, round_t=10, client=4).integers(0, 100, 8)
    other = batch_rng(3, round_t=11, client=4).integers(0, 100, 8)
    assert np.array_equal(one, two)
    assert not np.array_equal(one, other)


def test_availability_and_policy_streams_are_decoupled():
    # consuming the policy stream must not perturb availability draws
    first = availability_rng(5, 0).random(4)
    policy_rng(5).random(1000)
    assert np.array_equal(first, availability_rng(5, 0).random(4))
