"""The federated round engine: local SGD, de-biased aggregation, server step.

One round samples an availability configuration, lets the active policy
pick a subset, runs E local SGD steps on each selected client, combines
the resulting model deltas, and applies them through the server optimizer.
The greedy rate-tracking policy updates its smoothed participation rate
right after selection and divides each contribution by that fresh rate, so
the aggregate is an unbiased estimate of the full-participation update.

Learning-rate schedules follow the usual strongly convex analysis: with
mu-strong convexity and L-smoothness, eta_(t,i) = 2 / (mu (gamma + tE + i))
with gamma = max(8L/mu, E) gives the O(1/T) objective-gap decay that the
convergence tests check empirically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .availability import ConfigurationSample
from .data_models import ClientDataset, FederatedDataset, GlmModel, dataset_loss, evaluate, loss_and_grad
from .records import RoundRecord
from .selection import (
    CorrelationMode,
    HObjective,
    ParticipationRate,
    PolicyTable,
    SelectionResult,
    f3ast_select,
    fedavg_select,
    fixed_policy_select,
    poc_select,
    smooth_update,
)


class TrainingDivergedError(RuntimeError):
    """Local SGD hit a non-finite loss or gradient; the round is aborted."""


class ScheduleKind(Enum):
    CONSTANT = "constant"
    INVERSE_TIME = "inverse_time"


@dataclass(frozen=True)
class LearningRateSchedule:
    """Client step size as a function of the global step index t*E + i."""

    kind: ScheduleKind
    eta0: float = 0.01
    mu: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind is ScheduleKind.CONSTANT and self.eta0 <= 0:
            raise ValueError("constant schedule needs eta0 > 0")
        if self.kind is ScheduleKind.INVERSE_TIME and (self.mu <= 0 or self.gamma <= 0):
            raise ValueError("inverse-time schedule needs mu > 0 and gamma > 0")

    @classmethod
    def constant(cls, eta0: float) -> "LearningRateSchedule":
        return cls(ScheduleKind.CONSTANT, eta0=eta0)

    @classmethod
    def inverse_time(cls, mu: float, gamma: float) -> "LearningRateSchedule":
        return cls(ScheduleKind.INVERSE_TIME, mu=mu, gamma=gamma)

    def rate(self, step: int) -> float:
        if self.kind is ScheduleKind.CONSTANT:
            return self.eta0
        return 2.0 / (self.mu * (self.gamma + step))


def recommended_gamma(mu: float, smoothness: float, local_steps: int) -> float:
    """gamma = max(8 L / mu, E); keeps eta_(t,0) <= 2 eta_(t,E)."""
    return max(8.0 * smoothness / mu, float(local_steps))


@dataclass(frozen=True)
class ClientUpdate:
    """Model delta from one client's local pass."""

    client: int
    delta: np.ndarray
    samples_seen: int
    max_grad_norm: float = float("nan")


@dataclass(frozen=True)
class AggregateUpdate:
    delta: np.ndarray
    contributing: tuple[int, ...]


def client_local_sgd(
    model: GlmModel,
    data: ClientDataset,
    local_steps: int,
    schedule: LearningRateSchedule,
    batch_size: int,
    round_t: int,
    rng: np.random.Generator,
    client_id: int = -1,
) -> ClientUpdate:
    """Run E mini-batch SGD steps from the global model; return the delta.

    Batches are drawn without replacement per step (full batch when the
    client holds fewer than ``batch_size`` samples).  The caller's model is
    not touched.  Non-finite losses or gradients abort the round.
    """
    if local_steps < 1 or batch_size < 1:
        raise ValueError("local_steps and batch_size must be >= 1")
    if data.n < 1:
        raise ValueError("client dataset is empty")
    work = model.copy()
    w0 = work.flat_weights()
    b = min(batch_size, data.n)
    seen = 0
    grad_max = 0.0
    for i in range(local_steps):
        eta = schedule.rate(round_t * local_steps + i)
        idx = None if b == data.n else rng.choice(data.n, size=b, replace=False)
        loss, grad = loss_and_grad(work, data, idx)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(
                f"non-finite loss/gradient at round {round_t}, client {client_id}, "
                f"local step {i}, eta {eta:.3e}, loss {loss!r}"
            )
        grad_max = max(grad_max, float(np.linalg.norm(grad.ravel())))
        work.weights = work.weights - eta * grad
        seen += b
    return ClientUpdate(client_id, work.flat_weights() - w0, seen, grad_max)


def aggregate_debias(
    updates: list[ClientUpdate],
    p: np.ndarray,
    r: np.ndarray,
    r_min: float = 0.0,
    dim: int | None = None,
) -> AggregateUpdate:
    """Delta = sum_k (p_k / r_k) v_k over the contributing clients.

    Dividing by the participation rate makes the expectation over the
    selection equal the full-participation update.  Rates of contributing
    clients must respect the configured floor.
    """
    if not updates:
        if dim is None:
            raise ValueError("cannot size an empty aggregate without dim")
        return AggregateUpdate(np.zeros(dim), ())
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    delta = np.zeros_like(updates[0].delta)
    for u in updates:
        rk = r[u.client]
        if rk <= 0 or rk < r_min - 1e-12:
            raise ValueError(f"client {u.client} rate {rk!r} below the floor {r_min!r}")
        delta = delta + (p[u.client] / rk) * u.delta
    return AggregateUpdate(delta, tuple(sorted(u.client for u in updates)))


def aggregate_weighted_mean(
    updates: list[ClientUpdate], p: np.ndarray, dim: int | None = None
) -> AggregateUpdate:
    """sum p_k v_k / sum p_k over the selected set (classic averaging)."""
    if not updates:
        if dim is None:
            raise ValueError("cannot size an empty aggregate without dim")
        return AggregateUpdate(np.zeros(dim), ())
    p = np.asarray(p, dtype=float)
    mass = sum(p[u.client] for u in updates)
    if mass <= 0:
        raise ValueError("selected clients carry no weight mass")
    delta = sum((p[u.client] / mass) * u.delta for u in updates)
    return AggregateUpdate(delta, tuple(sorted(u.client for u in updates)))


def aggregate_unweighted_mean(updates: list[ClientUpdate], dim: int | None = None) -> AggregateUpdate:
    if not updates:
        if dim is None:
            raise ValueError("cannot size an empty aggregate without dim")
        return AggregateUpdate(np.zeros(dim), ())
    delta = sum(u.delta for u in updates) / len(updates)
    return AggregateUpdate(delta, tuple(sorted(u.client for u in updates)))


class ServerOptKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class ServerOptimizer:
    """Applies the aggregated delta: plain addition, or Adam on the delta
    treated as a pseudo-gradient (moments advance only on applied rounds)."""

    kind: ServerOptKind
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    steps: int = 0

    @classmethod
    def sgd(cls) -> "ServerOptimizer":
        return cls(ServerOptKind.SGD)

    @classmethod
    def adam(cls, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(ServerOptKind.ADAM, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def server_step(opt: ServerOptimizer, w: np.ndarray, agg: AggregateUpdate) -> np.ndarray:
    delta = agg.delta
    if opt.kind is ServerOptKind.SGD:
        return w + delta
    if opt.m is None:
        opt.m = np.zeros_like(w)
        opt.v = np.zeros_like(w)
    opt.steps += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * delta
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * delta**2
    m_hat = opt.m / (1.0 - opt.beta1**opt.steps)
    v_hat = opt.v / (1.0 - opt.beta2**opt.steps)
    return w + opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


class PolicyKind(Enum):
    F3AST = "f3ast"
    FEDAVG = "fedavg"
    POC = "poc"
    FIXED = "fixed"


@dataclass
class Policy:
    """Selection rule plus its matching aggregation."""

    kind: PolicyKind
    objective: HObjective | None = None
    table: PolicyTable | None = None
    target_rate: np.ndarray | None = None
    poc_candidates: int | None = None  # defaults to 2x the per-round budget

    @classmethod
    def f3ast(cls, p: np.ndarray, mode: CorrelationMode = CorrelationMode.UNCORRELATED) -> "Policy":
        return cls(PolicyKind.F3AST, objective=HObjective(np.asarray(p, dtype=float), mode))

    @classmethod
    def fedavg(cls) -> "Policy":
        return cls(PolicyKind.FEDAVG)

    @classmethod
    def poc(cls, candidates: int | None = None) -> "Policy":
        return cls(PolicyKind.POC, poc_candidates=candidates)

    @classmethod
    def fixed(cls, table: PolicyTable, target_rate: np.ndarray) -> "Policy":
        target = np.asarray(target_rate, dtype=float)
        selectable = {k for (pattern, _), rows in table.entries.items() for subset, _ in rows for k in subset}
        bad = [k for k in selectable if target[k] <= 0]
        if bad:
            raise ValueError(f"fixed policy can select clients {bad} whose target rate is 0")
        return cls(PolicyKind.FIXED, table=table, target_rate=target)


@dataclass
class TrainState:
    """Mutable across-round state: global model, optimizer, tracked rate."""

    model: GlmModel
    server_opt: ServerOptimizer
    rate: ParticipationRate | None = None
    round: int = 0


def _select(
    state: TrainState,
    policy: Policy,
    sample: ConfigurationSample,
    fed: FederatedDataset,
    policy_rng: np.random.Generator,
) -> SelectionResult:
    if policy.kind is PolicyKind.F3AST:
        result = f3ast_select(policy.objective, state.rate, sample)
        state.rate = smooth_update(state.rate, result.selected)
        return result
    if policy.kind is PolicyKind.FEDAVG:
        return fedavg_select(fed.p, sample, policy_rng)
    if policy.kind is PolicyKind.POC:
        budget = min(sample.capacity, len(sample.available))
        if budget == 0:
            return SelectionResult(())
        d = policy.poc_candidates if policy.poc_candidates is not None else 2 * budget
        losses = lambda k: dataset_loss(state.model, fed.clients[k].train)[0]
        return poc_select(fed.p, sample, losses, d, budget, policy_rng)
    return fixed_policy_select(policy.table, sample, policy_rng)


def _aggregate(
    policy: Policy, state: TrainState, updates: list[ClientUpdate], fed: FederatedDataset, dim: int
) -> AggregateUpdate:
    if policy.kind is PolicyKind.F3AST:
        rate = state.rate
        return aggregate_debias(updates, fed.p, rate.r, rate.r_min, dim)
    if policy.kind is PolicyKind.FIXED:
        return aggregate_debias(updates, fed.p, policy.target_rate, 0.0, dim)
    if policy.kind is PolicyKind.FEDAVG:
        return aggregate_weighted_mean(updates, fed.p, dim)
    return aggregate_unweighted_mean(updates, dim)


def run_round(
    state: TrainState,
    policy: Policy,
    sample: ConfigurationSample,
    fed: FederatedDataset,
    local_steps: int,
    batch_size: int,
    schedule: LearningRateSchedule,
    policy_rng: np.random.Generator,
    batch_rng: Callable[[int, int], np.random.Generator],
    eval_now: bool = False,
    record_rate: bool = False,
) -> RoundRecord:
    """Advance the global model by one round; see the module docstring.

    The rate-tracking policy folds the freshly selected set into r(t)
    before any training, and de-biases with that updated rate.  A round
    with nothing selected leaves the model and the server optimizer state
    untouched (but the tracked rate still decays) and is recorded as
    skipped.
    """
    started = time.perf_counter()
    result = _select(state, policy, sample, fed, policy_rng)
    selected = result.selected
    skipped = len(selected) == 0
    if not skipped:
        updates = [
            client_local_sgd(
                state.model,
                fed.clients[k].train,
                local_steps,
                schedule,
                batch_size,
                sample.round,
                batch_rng(sample.round, k),
                client_id=k,
            )
            for k in selected
        ]
        dim = state.model.flat_weights().size
        agg = _aggregate(policy, state, updates, fed, dim)
        state.model.assign_flat(server_step(state.server_opt, state.model.flat_weights(), agg))
    record = RoundRecord(
        round=sample.round,
        skipped=skipped,
        n_available=len(sample.available),
        selected=selected,
    )
    if eval_now:
        per_sample = evaluate(state.model, fed, "per_sample")
        per_user = evaluate(state.model, fed, "per_user")
        record.per_sample_loss = per_sample.loss
        record.per_sample_acc = per_sample.accuracy
        record.per_user_loss = per_user.loss
        record.per_user_acc = per_user.accuracy
    if record_rate and state.rate is not None:
        record.rate_snapshot = state.rate.r.copy()
    state.round = sample.round + 1
    record.wall_clock = time.perf_counter() - started
    return record
