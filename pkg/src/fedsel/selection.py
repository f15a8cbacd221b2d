"""Client selection policies and the smoothed participation-rate state.

The greedy policy ranks available clients by the negative gradient of the
variance surrogate H(r) and fills the round's budget with the top ones,
then folds the chosen set into an exponentially smoothed participation
rate used to de-bias aggregation.  Baselines (weighted sampling and
power-of-choice) and a table-driven fixed policy share the same
configuration interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .availability import ConfigurationSample

Pattern = tuple[int, ...]
PatternKey = tuple[Pattern, int]


class CorrelationMode(Enum):
    """Which variance surrogate applies, per the availability correlation."""

    UNCORRELATED = "uncorrelated"
    POSITIVELY_CORRELATED = "positively_correlated"


class PolicyIncompleteError(KeyError):
    """A fixed policy table has no row for the observed configuration."""


@dataclass(frozen=True)
class HObjective:
    """Variance surrogate H(r): sum p_k^2/r_k, or sum p_k/r_k when
    availability is positively correlated."""

    p: np.ndarray
    mode: CorrelationMode = CorrelationMode.UNCORRELATED

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("p must be a non-empty vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("p must be finite and non-negative")
        if p.sum() <= 0:
            raise ValueError("p must have positive total mass")
        object.__setattr__(self, "p", p)

    @property
    def n_clients(self) -> int:
        return self.p.shape[0]


def _check_rates(obj: HObjective, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != obj.p.shape:
        raise ValueError(f"rate shape {r.shape} does not match p shape {obj.p.shape}")
    if np.any(r <= 0):
        raise ValueError("H(r) is only defined for strictly positive rates")
    return r


def h_value(obj: HObjective, r: np.ndarray) -> float:
    r = _check_rates(obj, r)
    if obj.mode is CorrelationMode.UNCORRELATED:
        return float(np.sum(obj.p**2 / r))
    return float(np.sum(obj.p / r))


def h_gradient(obj: HObjective, r: np.ndarray) -> np.ndarray:
    """Gradient of H; every component is <= 0 (H falls as rates grow)."""
    r = _check_rates(obj, r)
    if obj.mode is CorrelationMode.UNCORRELATED:
        return -(obj.p**2) / r**2
    return -obj.p / r**2


@dataclass(frozen=True)
class ParticipationRate:
    """Exponentially smoothed selection frequency r(t), floored at r_min."""

    r: np.ndarray
    beta: float = 0.001
    r_min: float = 1e-4

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.r_min <= 1.0:
            raise ValueError(f"r_min must lie in (0, 1], got {self.r_min}")
        if np.any(r < self.r_min) or np.any(r > 1.0):
            raise ValueError("rate components must lie in [r_min, 1]")
        object.__setattr__(self, "r", r)

    @classmethod
    def uniform(cls, n_clients: int, beta: float = 0.001, r_min: float = 1e-4) -> "ParticipationRate":
        return cls(np.full(n_clients, 1.0 / n_clients), beta=beta, r_min=r_min)


def smooth_update(rate: ParticipationRate, selected: tuple[int, ...]) -> ParticipationRate:
    """r' = (1-beta) r + beta 1_S, clamped to [r_min, 1]."""
    ind = np.zeros_like(rate.r)
    if len(selected):
        ind[np.asarray(selected, dtype=int)] = 1.0
    r_new = np.maximum((1.0 - rate.beta) * rate.r + rate.beta * ind, rate.r_min)
    return ParticipationRate(r_new, beta=rate.beta, r_min=rate.r_min)


@dataclass(frozen=True)
class SelectionResult:
    """Chosen client set (sorted) plus optional per-client utilities."""

    selected: tuple[int, ...]
    utilities: np.ndarray | None = None


def f3ast_select(
    obj: HObjective, rate: ParticipationRate, config: ConfigurationSample
) -> SelectionResult:
    """Greedy descent step on H: take the available clients with the
    largest -dH/dr_k, up to the round's capacity.

    Equivalent to the exhaustive argmax of -grad H(r) . 1_S over feasible
    subsets, since utilities are non-negative.  Ties break toward lower
    client ids.
    """
    utilities = -h_gradient(obj, rate.r)
    avail = np.asarray(config.available, dtype=int)
    m = min(config.capacity, avail.size)
    if m == 0:
        return SelectionResult((), utilities)
    order = np.lexsort((avail, -utilities[avail]))
    chosen = avail[order[:m]]
    return SelectionResult(tuple(sorted(int(k) for k in chosen)), utilities)


def _weighted_draw_without_replacement(
    ids: np.ndarray, weights: np.ndarray, count: int, rng: np.random.Generator
) -> list[int]:
    """Sequential proportional draws, renormalizing after each removal.

    Stops early if the remaining mass hits zero (clients with zero weight
    are never drawn).
    """
    w = np.array(weights, dtype=float)
    chosen: list[int] = []
    for _ in range(count):
        total = w.sum()
        if total <= 0.0:
            break
        j = int(rng.choice(ids.size, p=w / total))
        chosen.append(int(ids[j]))
        w[j] = 0.0
    return chosen


def fedavg_select(
    p: np.ndarray, config: ConfigurationSample, rng: np.random.Generator
) -> SelectionResult:
    """Sample min(K_t, |available|) distinct clients proportionally to p."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("client weights must be non-negative")
    avail = np.asarray(config.available, dtype=int)
    m = min(config.capacity, avail.size)
    if m == 0:
        return SelectionResult(())
    chosen = _weighted_draw_without_replacement(avail, p[avail], m, rng)
    return SelectionResult(tuple(sorted(chosen)))


def poc_select(
    p: np.ndarray,
    config: ConfigurationSample,
    losses: Callable[[int], float],
    d: int,
    m: int,
    rng: np.random.Generator,
) -> SelectionResult:
    """Power-of-choice: poll d weighted candidates, train the m lossiest.

    Candidates are drawn without replacement proportionally to p; ties in
    loss break toward lower client ids.
    """
    if d < 1 or m < 1:
        raise ValueError("poc_select needs d >= 1 and m >= 1")
    p = np.asarray(p, dtype=float)
    avail = np.asarray(config.available, dtype=int)
    if avail.size == 0 or config.capacity == 0:
        return SelectionResult(())
    cands = _weighted_draw_without_replacement(avail, p[avail], min(d, avail.size), rng)
    if not cands:
        return SelectionResult(())
    cand_losses = np.array([float(losses(k)) for k in cands])
    order = np.lexsort((np.asarray(cands), -cand_losses))
    top = [cands[j] for j in order[: min(m, len(cands))]]
    return SelectionResult(tuple(sorted(top)))


@dataclass(frozen=True)
class PolicyTable:
    """Static configuration-dependent policy: for every (pattern, capacity)
    key, a distribution over feasible subsets."""

    n_clients: int
    entries: Mapping[PatternKey, tuple[tuple[Pattern, float], ...]]

    def __post_init__(self):
        for (pattern, cap), rows in self.entries.items():
            if tuple(sorted(set(pattern))) != tuple(pattern):
                raise ValueError(f"pattern {pattern} must be sorted and duplicate-free")
            if pattern and (pattern[0] < 0 or pattern[-1] >= self.n_clients):
                raise ValueError(f"pattern {pattern} out of range")
            if cap < 0:
                raise ValueError("capacity must be >= 0")
            total = 0.0
            seen = set()
            members = set(pattern)
            for subset, prob in rows:
                if prob < 0:
                    raise ValueError(f"negative selection probability for {subset}")
                if tuple(sorted(set(subset))) != tuple(subset):
                    raise ValueError(f"subset {subset} must be sorted and duplicate-free")
                if not set(subset) <= members:
                    raise ValueError(f"subset {subset} not contained in pattern {pattern}")
                if len(subset) > cap:
                    raise ValueError(f"subset {subset} exceeds capacity {cap}")
                if subset in seen:
                    raise ValueError(f"duplicate subset {subset} under {pattern}")
                seen.add(subset)
                total += prob
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"selection probabilities under {pattern} sum to {total!r}")

    @classmethod
    def deterministic(
        cls, n_clients: int, mapping: Mapping[PatternKey, Pattern]
    ) -> "PolicyTable":
        entries = {key: ((tuple(subset), 1.0),) for key, subset in mapping.items()}
        return cls(n_clients, entries)


def fixed_policy_select(
    table: PolicyTable, config: ConfigurationSample, rng: np.random.Generator
) -> SelectionResult:
    """Draw a subset from the table's distribution for this configuration."""
    key = (config.available, config.capacity)
    rows = table.entries.get(key)
    if rows is None:
        raise PolicyIncompleteError(f"no table entry for configuration {key}")
    probs = np.array([prob for _, prob in rows], dtype=float)
    idx = int(rng.choice(len(rows), p=probs / probs.sum()))
    return SelectionResult(tuple(rows[idx][0]))
