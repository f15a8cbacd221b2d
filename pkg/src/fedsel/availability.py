"""Client availability processes and per-round communication budgets.

A round presents the server with a random set of available clients and a
capacity (how many of them may be selected).  Built-in models draw each
client independently per round from a per-client probability q_k; the
models differ only in how q_k is derived and whether it is modulated over
time.  Correlated availability can be plugged in through
:class:`MarkovAvailability`; no correlated model is shipped.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np


class AvailabilityKind(Enum):
    ALWAYS = "always"
    SCARCE = "scarce"
    HOME_DEVICES = "home_devices"
    SMARTPHONES = "smartphones"
    UNEVEN = "uneven"


@dataclass(frozen=True)
class ConfigurationSample:
    """Availability outcome of one round: who is up, and the budget K_t."""

    round: int
    available: tuple[int, ...]
    capacity: int

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")
        if tuple(sorted(set(self.available))) != self.available:
            raise ValueError("available must be sorted and free of duplicates")
        if self.available and self.available[0] < 0:
            raise ValueError("client ids must be non-negative")


@dataclass(frozen=True)
class ConfigurationDistribution:
    """Enumerable distribution over (availability pattern, capacity) outcomes.

    ``outcomes`` lists (pattern, capacity, probability) with patterns given
    as sorted client-id tuples.  Probabilities must sum to one; outcome
    keys must be distinct.
    """

    n_clients: int
    outcomes: tuple[tuple[tuple[int, ...], int, float], ...]

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        total = 0.0
        seen = set()
        for pattern, cap, prob in self.outcomes:
            if prob < 0:
                raise ValueError(f"negative outcome probability {prob}")
            if cap < 0:
                raise ValueError(f"negative capacity {cap}")
            if tuple(sorted(set(pattern))) != tuple(pattern):
                raise ValueError(f"pattern {pattern} must be sorted and duplicate-free")
            if pattern and (pattern[0] < 0 or pattern[-1] >= self.n_clients):
                raise ValueError(f"pattern {pattern} out of range for N={self.n_clients}")
            key = (tuple(pattern), cap)
            if key in seen:
                raise ValueError(f"duplicate outcome {key}")
            seen.add(key)
            total += prob
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"outcome probabilities sum to {total!r}, expected 1")

    def sample(self, round_t: int, rng: np.random.Generator) -> ConfigurationSample:
        probs = np.array([o[2] for o in self.outcomes])
        idx = int(rng.choice(len(self.outcomes), p=probs))
        pattern, cap, _ = self.outcomes[idx]
        return ConfigurationSample(round_t, tuple(pattern), cap)


@dataclass(frozen=True)
class CapacitySchedule:
    """Communication budget K_t, either constant or listed per round."""

    constant_value: int | None = None
    per_round: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.constant_value is None) == (self.per_round is None):
            raise ValueError("exactly one of constant_value / per_round must be set")
        values = (self.constant_value,) if self.per_round is None else self.per_round
        for v in values:
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"capacities must be non-negative integers, got {v!r}")

    @classmethod
    def constant(cls, value: int) -> "CapacitySchedule":
        return cls(constant_value=int(value))

    @classmethod
    def listed(cls, schedule: Sequence[int]) -> "CapacitySchedule":
        return cls(per_round=tuple(int(v) for v in schedule))

    def value_at(self, t: int) -> int:
        if self.constant_value is not None:
            return self.constant_value
        if t < 0 or t >= len(self.per_round):
            raise IndexError(f"round {t} outside the listed capacity schedule")
        return self.per_round[t]


@dataclass
class AvailabilityModel:
    """Per-client availability probabilities and their time modulation.

    ``per_client_q`` is filled by :func:`derive_client_probs`; models whose
    q_k depend on randomness (lognormal draws) or on the data weights
    (uneven) cannot be sampled before that.
    """

    kind: AvailabilityKind
    n_clients: int
    scarce_q: float = 0.2
    lognormal_sigma: float = 0.5
    sine_amplitude: float = 0.4
    sine_offset: float = 0.5
    period_steps: int = 24
    uneven_mean_q: float = 0.5
    per_client_q: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not 0.0 <= self.scarce_q <= 1.0:
            raise ValueError(f"scarce_q must lie in [0, 1], got {self.scarce_q}")
        if self.lognormal_sigma < 0:
            raise ValueError("lognormal_sigma must be >= 0")
        if self.period_steps < 1:
            raise ValueError("period_steps must be >= 1")
        if not 0.0 < self.uneven_mean_q <= 1.0:
            raise ValueError(f"uneven_mean_q must lie in (0, 1], got {self.uneven_mean_q}")

    @classmethod
    def always(cls, n_clients: int) -> "AvailabilityModel":
        return cls(AvailabilityKind.ALWAYS, n_clients)

    @classmethod
    def scarce(cls, n_clients: int, q: float = 0.2) -> "AvailabilityModel":
        return cls(AvailabilityKind.SCARCE, n_clients, scarce_q=q)

    @classmethod
    def home_devices(cls, n_clients: int, sigma: float = 0.5) -> "AvailabilityModel":
        return cls(AvailabilityKind.HOME_DEVICES, n_clients, lognormal_sigma=sigma)

    @classmethod
    def smartphones(
        cls,
        n_clients: int,
        sigma: float = 0.25,
        amplitude: float = 0.4,
        offset: float = 0.5,
        period_steps: int = 24,
    ) -> "AvailabilityModel":
        return cls(
            AvailabilityKind.SMARTPHONES,
            n_clients,
            lognormal_sigma=sigma,
            sine_amplitude=amplitude,
            sine_offset=offset,
            period_steps=period_steps,
        )

    @classmethod
    def uneven(cls, n_clients: int, mean_q: float = 0.5) -> "AvailabilityModel":
        return cls(AvailabilityKind.UNEVEN, n_clients, uneven_mean_q=mean_q)

    def diurnal_factor(self, t: int) -> float:
        """Sine modulation f_t for the smartphones model (1.0 otherwise)."""
        if self.kind is not AvailabilityKind.SMARTPHONES:
            return 1.0
        phase = 2.0 * math.pi * (t % self.period_steps) / self.period_steps
        return self.sine_amplitude * math.sin(phase) + self.sine_offset

    def effective_q(self, t: int) -> np.ndarray:
        """Per-client availability probabilities in force at round ``t``."""
        if self.per_client_q is None:
            raise RuntimeError("per_client_q not derived; call derive_client_probs first")
        q = self.per_client_q * self.diurnal_factor(t)
        return np.clip(q, 0.0, 1.0)


def _uneven_probs(p: np.ndarray, mean_q: float) -> np.ndarray:
    """q_k = min(1, c/p_k) with c pinned so that mean_k q_k = mean_q."""
    if np.any(p <= 0):
        raise ValueError("uneven availability requires strictly positive client weights")
    lo, hi = 0.0, float(p.max())
    # mean_k min(1, c/p_k) is continuous and nondecreasing in c; bisect.
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if np.minimum(1.0, c / p).mean() < mean_q:
            lo = c
        else:
            hi = c
    return np.minimum(1.0, 0.5 * (lo + hi) / p)


def derive_client_probs(
    model: AvailabilityModel,
    weights: np.ndarray | None = None,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Derive, cache and return the per-client probabilities q_k.

    Parameters
    ----------
    weights : client weight vector p, required for the uneven model only.
    rng : generator (or seed) for the lognormal draws of the home-devices
        and smartphones models.
    """
    n = model.n_clients
    kind = model.kind
    if kind is AvailabilityKind.ALWAYS:
        q = np.ones(n)
    elif kind is AvailabilityKind.SCARCE:
        q = np.full(n, model.scarce_q)
    elif kind in (AvailabilityKind.HOME_DEVICES, AvailabilityKind.SMARTPHONES):
        if rng is None:
            raise ValueError(f"{kind.value} model needs an rng for its lognormal draws")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        draws = rng.lognormal(mean=0.0, sigma=model.lognormal_sigma, size=n)
        top = int(np.argmax(draws))  # ties resolve to the lowest index
        q = np.minimum(draws / draws[top], 1.0)
        dupes = np.flatnonzero(q >= 1.0)
        q[dupes[dupes != top]] = np.nextafter(1.0, 0.0)
        q[top] = 1.0
    elif kind is AvailabilityKind.UNEVEN:
        if weights is None:
            raise ValueError("uneven model needs the client weight vector")
        p = np.asarray(weights, dtype=float)
        if p.shape != (n,):
            raise ValueError(f"weights must have shape ({n},), got {p.shape}")
        q = _uneven_probs(p, model.uneven_mean_q)
    else:  # pragma: no cover
        raise ValueError(f"unknown availability kind {kind}")
    if np.any(q < 0) or np.any(q > 1):
        raise AssertionError("derived probabilities left [0, 1]")
    model.per_client_q = q
    return q


def sample_round(
    model: AvailabilityModel,
    capacity: CapacitySchedule | int,
    t: int,
    rng: np.random.Generator,
) -> ConfigurationSample:
    """Draw the availability outcome of round ``t``.

    Clients are drawn independently with probability ``effective_q(t)``;
    the capacity comes from the schedule.  Sampling is a pure function of
    (model, t, generator state).
    """
    q = model.effective_q(t)
    up = np.flatnonzero(rng.random(model.n_clients) < q)
    cap = capacity.value_at(t) if isinstance(capacity, CapacitySchedule) else int(capacity)
    return ConfigurationSample(t, tuple(int(k) for k in up), cap)


def two_client_example() -> ConfigurationDistribution:
    """The two-client fixture: independent availability, capacity one.

    Client 0 is up with probability 0.375, client 1 with probability 0.8,
    so the joint outcomes are (both: 0.3), (only 0: 0.075), (only 1: 0.5),
    (none: 0.125).
    """
    return ConfigurationDistribution(
        n_clients=2,
        outcomes=(
            ((0, 1), 1, 0.3),
            ((0,), 1, 0.075),
            ((1,), 1, 0.5),
            ((), 1, 0.125),
        ),
    )


def independent_distribution(
    q: np.ndarray, capacity: int, max_clients: int = 16
) -> ConfigurationDistribution:
    """Enumerate the outcome distribution of independent availability.

    Exact enumeration over all 2^N availability patterns; guarded to
    ``max_clients`` since the outcome count is exponential.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if n > max_clients:
        raise ValueError(f"enumeration over 2^{n} patterns refused (max_clients={max_clients})")
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    outcomes = []
    for bits in itertools.product((0, 1), repeat=n):
        mask = np.array(bits, dtype=bool)
        prob = float(np.prod(np.where(mask, q, 1.0 - q)))
        pattern = tuple(int(k) for k in np.flatnonzero(mask))
        outcomes.append((pattern, capacity, prob))
    return ConfigurationDistribution(n_clients=n, outcomes=tuple(outcomes))


def periodic_mixture_distribution(
    model: AvailabilityModel, capacity: int, max_clients: int = 12
) -> ConfigurationDistribution:
    """Long-run outcome distribution of the smartphones model.

    The sine modulation cycles through ``period_steps`` phases, so the
    stationary behaviour is the uniform mixture of the per-phase
    independent distributions.
    """
    if model.kind is not AvailabilityKind.SMARTPHONES:
        raise ValueError("periodic mixture only applies to the smartphones model")
    if model.n_clients > max_clients:
        raise ValueError("mixture enumeration refused for this many clients")
    acc: dict[tuple[tuple[int, ...], int], float] = {}
    period = model.period_steps
    for j in range(period):
        dist = independent_distribution(model.effective_q(j), capacity)
        for pattern, cap, prob in dist.outcomes:
            key = (pattern, cap)
            acc[key] = acc.get(key, 0.0) + prob / period
    outcomes = tuple((pat, cap, prob) for (pat, cap), prob in sorted(acc.items()))
    return ConfigurationDistribution(n_clients=model.n_clients, outcomes=outcomes)


@dataclass
class MarkovAvailability:
    """Hook for user-supplied correlated availability.

    ``patterns`` enumerates availability sets, ``transition`` is the
    row-stochastic matrix over them, and the chain state advances once per
    sampled round.  Nothing correlated is shipped built-in; this class only
    executes what the caller provides.
    """

    n_clients: int
    patterns: tuple[tuple[int, ...], ...]
    transition: np.ndarray
    capacity: int
    state: int = 0

    def __post_init__(self):
        m = len(self.patterns)
        t = np.asarray(self.transition, dtype=float)
        if t.shape != (m, m):
            raise ValueError(f"transition must be {m}x{m}, got {t.shape}")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must be non-negative and sum to 1")
        if not 0 <= self.state < m:
            raise ValueError("initial state out of range")
        self.transition = t

    def sample_round(self, t: int, rng: np.random.Generator) -> ConfigurationSample:
        row = self.transition[self.state]
        self.state = int(rng.choice(len(self.patterns), p=row))
        return ConfigurationSample(t, tuple(self.patterns[self.state]), self.capacity)
