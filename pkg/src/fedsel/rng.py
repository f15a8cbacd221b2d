"""Named random sub-streams derived from one master seed.

Every source of randomness in a run (availability draws, dataset
generation, local SGD batching, policy sampling) gets its own stream so
that changing one concern never perturbs another.  In particular the
availability and data streams are identical across policies for a fixed
seed, which is what makes side-by-side policy comparisons paired.
"""

from __future__ import annotations

import numpy as np

# Concern identifiers; part of the reproducibility contract, do not reorder.
AVAILABILITY = 1
DATA = 2
BATCH = 3
POLICY = 4
AVAILABILITY_STATIC = 5  # per-client probability draws (lognormal models)


def substream(master_seed: int, concern: int, *key: int) -> np.random.Generator:
    """Return the generator for ``concern`` (optionally keyed, e.g. by round).

    Streams are derived with ``SeedSequence(master_seed, spawn_key=...)``,
    so they are independent of each other and of the order in which they
    are created.
    """
    if master_seed < 0:
        raise ValueError(f"master seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(master_seed, spawn_key=(concern, *key))
    return np.random.default_rng(seq)


def availability_rng(master_seed: int, round_t: int) -> np.random.Generator:
    """Availability draws for round ``round_t``; policy-independent."""
    return substream(master_seed, AVAILABILITY, round_t)


def batch_rng(master_seed: int, round_t: int, client: int) -> np.random.Generator:
    """Local SGD batching for ``client`` at round ``round_t``.

    Keyed per (round, client) so a client selected at the same round by two
    different policies samples identical mini-batches.
    """
    return substream(master_seed, BATCH, round_t, client)


def data_rng(master_seed: int) -> np.random.Generator:
    return substream(master_seed, DATA)


def policy_rng(master_seed: int) -> np.random.Generator:
    """Sequential stream consumed by stochastic selection policies."""
    return substream(master_seed, POLICY)
